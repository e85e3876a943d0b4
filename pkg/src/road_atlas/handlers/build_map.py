"""Handler for building a map from posed frames."""

from typing import Any, Dict, Sequence

from mcp.types import TextContent, Tool

from ..models import BuildMapRequest
from .base import BaseHandler


class BuildMapHandler(BaseHandler):
    """Handler for integrating a frame directory into a saved atlas."""

    name = "build_map"
    description = (
        "Build a Road-Atlas map from a directory of .bin LiDAR frames and a pose file "
        "(12 numbers per line, one line per frame). Every frame is integrated as a "
        "keyframe in name order and the map is written as an .lra file. "
        "Returns the map's storage report."
    )

    def get_tool_description(self) -> Tool:
        """Get the tool description."""
        return Tool(
            name=self.name,
            description=self.description,
            inputSchema={
                "type": "object",
                "properties": {
                    "frames_dir": {
                        "type": "string",
                        "description": "Directory holding the .bin frames",
                    },
                    "poses_file": {
                        "type": "string",
                        "description": "One 3x4 row-major pose per line",
                    },
                    "output_path": {
                        "type": "string",
                        "description": "Path of the .lra map to write",
                    },
                    "config": {
                        "type": "object",
                        "description": "Run config overrides, e.g. {\"width\": 900}",
                    },
                },
                "required": ["frames_dir", "poses_file", "output_path"],
            },
        )

    async def run_tool(self, arguments: Dict[str, Any]) -> Sequence[TextContent]:
        """Execute the tool with given arguments."""
        return self._respond(BuildMapRequest, self.service.build_map, arguments)
