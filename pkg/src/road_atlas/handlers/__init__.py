"""Handlers for the Road-Atlas tool server."""

from .build_map import BuildMapHandler
from .export_map import ExportMapHandler
from .localize_frames import LocalizeFramesHandler
from .map_stats import MapStatsHandler
from .plan_route import PlanRouteHandler
from .simulate_scene import SimulateSceneHandler

__all__ = [
    "BuildMapHandler",
    "ExportMapHandler",
    "LocalizeFramesHandler",
    "MapStatsHandler",
    "PlanRouteHandler",
    "SimulateSceneHandler",
]
