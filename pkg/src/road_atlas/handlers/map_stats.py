"""Handler for map storage reports."""

from typing import Any, Dict, Sequence

from mcp.types import TextContent, Tool

from ..models import MapStatsRequest
from .base import BaseHandler


class MapStatsHandler(BaseHandler):
    """Handler for the storage report of a saved atlas."""

    name = "map_stats"
    description = (
        "Report cell, layer and byte counts of a saved .lra map, with the descriptor "
        "compaction against one f32 per segment and the file size against dense voxels."
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
                },
                "required": ["map_path"],
            },
        )

    async def run_tool(self, arguments: Dict[str, Any]) -> Sequence[TextContent]:
        """Execute the tool with given arguments."""
        return self._respond(
            MapStatsRequest, lambda r: self.service.map_stats(r.map_path), arguments
        )
