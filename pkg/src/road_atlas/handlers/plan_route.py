"""Handler for multi-layer route planning."""

from typing import Any, Dict, Sequence

from mcp.types import TextContent, Tool

from ..models import PlanRouteRequest
from .base import BaseHandler


class PlanRouteHandler(BaseHandler):
    """Handler for A* queries on a saved atlas."""

    name = "plan_route"
    description = (
        "Plan a route between two 3D points over the traversable layers of a "
        "saved map. "
        "Both points are snapped to the nearest free layer within 1 m altitude. "
        "Layers of neighbouring cells connect when their altitude step is at most "
        "max_step, so routes between levels go through ramps. "
        "Returns the waypoints, or result 'no_path' when the ends are disconnected."
    )

    def get_tool_description(self) -> Tool:
        """Get the tool description."""
        point = {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 3,
            "maxItems": 3,
        }
        return Tool(
            name=self.name,
            description=self.description,
            inputSchema={
                "type": "object",
                "properties": {
                    "map_path": {"type": "string", "description": "Saved .lra map"},
                    "start": {**point, "description": "Start x y z"},
                    "goal": {**point, "description": "Goal x y z"},
                    "output_path": {
                        "type": ["string", "null"],
                        "description": "Waypoint file to write (optional)",
                    },
                    "max_step": {
                        "type": "number",
                        "description": "Largest altitude step between cells in meters",
                        "default": 0.3,
                    },
                },
                "required": ["map_path", "start", "goal"],
            },
        )

    async def run_tool(self, arguments: Dict[str, Any]) -> Sequence[TextContent]:
        """Execute the tool with given arguments."""
        return self._respond(PlanRouteRequest, self.service.plan, arguments)
