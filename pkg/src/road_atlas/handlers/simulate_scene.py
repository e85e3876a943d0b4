"""Handler for synthetic scene generation."""

from typing import Any, Dict, Sequence

from mcp.types import TextContent, Tool

from ..models import SimulateSceneRequest
from ..synth import SCENE_LIBRARY
from .base import BaseHandler


class SimulateSceneHandler(BaseHandler):
    """Handler for simulating LiDAR frames with ground-truth labels."""

    name = "simulate_scene"
    description = (
        "Simulate LiDAR frames of a synthetic scene along a trajectory. Writes "
        "frames/NNNNNN.bin, labels/NNNNNN.label (0 road, 1 curb, 2 irrelevant) and "
        f"poses.txt. Library scenes: {', '.join(SCENE_LIBRARY)}."
    )

    def get_tool_description(self) -> Tool:
        """Get the tool description."""
        return Tool(
            name=self.name,
            description=self.description,
            inputSchema={
                "type": "object",
                "properties": {
                    "scene": {
                        "type": "string",
                        "description": "Library scene name or path of a scene .json",
                    },
                    "trajectory_file": {
                        "type": "string",
                        "description": "Pose file of sensor poses, one per frame",
                    },
                    "output_dir": {
                        "type": "string",
                        "description": "Directory to write frames, labels and poses",
                    },
                },
                "required": ["scene", "trajectory_file", "output_dir"],
            },
        )

    async def run_tool(self, arguments: Dict[str, Any]) -> Sequence[TextContent]:
        """Execute the tool with given arguments."""
        return self._respond(SimulateSceneRequest, self.service.synthesize, arguments)
