"""Handler for localizing frames against a saved map."""

from typing import Any, Dict, Sequence

from mcp.types import TextContent, Tool

from ..models import LocalizeRequest
from .base import BaseHandler


class LocalizeFramesHandler(BaseHandler):
    """Handler for tracking a frame sequence on a saved atlas."""

    name = "localize_frames"
    description = (
        "Localize a directory of .bin frames against a saved .lra map, seeded by the "
        "pose of the first frame. Writes one trajectory line per frame and returns "
        "convergence counts, timings and, when a truth file is given, RMSE."
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
                    "frames_dir": {
                        "type": "string",
                        "description": "Directory holding the .bin frames",
                    },
                    "initial_pose": {
                        "type": "array",
                        "items": {"type": "number"},
                        "description": "x y z qx qy qz qw of the first frame",
                    },
                    "output_path": {
                        "type": "string",
                        "description": "Trajectory file to write",
                    },
                    "truth_file": {
                        "type": ["string", "null"],
                        "description": "Ground-truth pose file (optional)",
                    },
                    "config": {
                        "type": "object",
                        "description": "Run configuration overrides",
                    },
                },
                "required": ["map_path", "frames_dir", "initial_pose", "output_path"],
            },
        )

    async def run_tool(self, arguments: Dict[str, Any]) -> Sequence[TextContent]:
        """Execute the tool with given arguments."""
        return self._respond(LocalizeRequest, self.service.localize, arguments)
