"""Handler for exporting maps as point files."""

from typing import Any, Dict, Sequence

from mcp.types import TextContent, Tool

from ..models import ExportMapRequest
from .base import BaseHandler


class ExportMapHandler(BaseHandler):
    """Handler for ASCII PCD / PLY export of a saved atlas."""

    name = "export_map"
    description = (
        "Export the decoded obstacle cloud and the traversable layer centers of a "
        "saved map as an ASCII .pcd or .ply file (label 0 obstacle, 1 traversable)."
    )

    def get_tool_description(self) -> Tool:
        """Get the tool description."""
        return Tool(
            name=self.name,
            description=self.description,
            inputSchema={
                "type": "object",
                "properties": {
                    "map_path": {"type": "string", "description": "Saved .lra map"},
                    "output_path": {
                        "type": "string",
                        "description": "Point file to write",
                    },
                    "format": {
                        "type": "string",
                        "enum": ["pcd", "ply"],
                        "description": "Point file format",
                        "default": "pcd",
                    },
                },
                "required": ["map_path", "output_path"],
            },
        )

    async def run_tool(self, arguments: Dict[str, Any]) -> Sequence[TextContent]:
        """Execute the tool with given arguments."""
        return self._respond(ExportMapRequest, self.service.export, arguments)
