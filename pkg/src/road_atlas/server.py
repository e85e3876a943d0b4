"""Road-Atlas MCP server implementation."""

import logging
import traceback
from collections.abc import Sequence
from typing import Any, List

from mcp.server import Server
from mcp.types import Resource, ResourceTemplate, TextContent, Tool

from .handlers import (
    BuildMapHandler,
    ExportMapHandler,
    LocalizeFramesHandler,
    MapStatsHandler,
    PlanRouteHandler,
    SimulateSceneHandler,
)
from .handlers.atlas_resource_handler import AtlasResourceHandler
from .service import RoadAtlasService
from .version import __version__

# Configure logging
logging.basicConfig(level=logging.ERROR)
logger = logging.getLogger("road-atlas")

app = Server("road-atlas")
service = RoadAtlasService()
# Initialize handlers
build_map_handler = BuildMapHandler(service)
localize_frames_handler = LocalizeFramesHandler(service)
plan_route_handler = PlanRouteHandler(service)
map_stats_handler = MapStatsHandler(service)
simulate_scene_handler = SimulateSceneHandler(service)
export_map_handler = ExportMapHandler(service)
atlas_resource_handler = AtlasResourceHandler(service)


@app.read_resource()
async def read_resource(uri: str) -> TextContent:
    """Handle resource read requests."""
    logger.info(f"Reading resource: {uri}")
    try:
        return await atlas_resource_handler.handle_resource(str(uri))
    except ValueError as e:
        logger.error(f"Invalid resource URI: {str(e)}")
        raise
    except Exception as e:
        logger.error(traceback.format_exc())
        raise RuntimeError(f"Error reading resource: {str(e)}") from e


@app.list_resources()
async def list_resources() -> List[Resource]:
    """List available resources that can be accessed by clients."""
    logger.info("Listing available resources")
    return [
        Resource(
            uri="atlas://map.lra",
            name="Atlas storage report",
            mimeType="application/json",
            description="Storage report of a saved .lra map (atlas:// URI scheme).",
        )
    ]


@app.list_resource_templates()
async def list_resource_templates() -> List[ResourceTemplate]:
    """List available resource templates."""
    return [
        ResourceTemplate(
            uriTemplate="atlas://{path}",
            name="Atlas storage report",
            mimeType="application/json",
            description="""Storage report of a saved map.
Parameters:
- path: Path to the .lra file
Example: atlas:///data/run/map.lra""",
        )
    ]


@app.list_tools()
async def list_tools() -> List[Tool]:
    """List available tools."""
    return [
        build_map_handler.get_tool_description(),
        localize_frames_handler.get_tool_description(),
        plan_route_handler.get_tool_description(),
        map_stats_handler.get_tool_description(),
        simulate_scene_handler.get_tool_description(),
        export_map_handler.get_tool_description(),
    ]


@app.call_tool()
async def call_tool(name: str, arguments: Any) -> Sequence[TextContent]:
    """Handle tool calls."""
    logger.info(f"Calling tool: {name}")
    try:
        if name == build_map_handler.name:
            return await build_map_handler.run_tool(arguments)
        elif name == localize_frames_handler.name:
            return await localize_frames_handler.run_tool(arguments)
        elif name == plan_route_handler.name:
            return await plan_route_handler.run_tool(arguments)
        elif name == map_stats_handler.name:
            return await map_stats_handler.run_tool(arguments)
        elif name == simulate_scene_handler.name:
            return await simulate_scene_handler.run_tool(arguments)
        elif name == export_map_handler.name:
            return await export_map_handler.run_tool(arguments)
        else:
            raise ValueError(f"Unknown tool: {name}")
    except ValueError:
        logger.error(traceback.format_exc())
        raise
    except Exception as e:
        logger.error(traceback.format_exc())
        raise RuntimeError(f"Error executing command: {str(e)}") from e


async def main() -> None:
    """Main entry point for the Road-Atlas MCP server."""
    logger.info(f"Starting Road-Atlas server v{__version__}")
    try:
        from mcp.server.stdio import stdio_server

        async with stdio_server() as (read_stream, write_stream):
            await app.run(
                read_stream,
                write_stream,
                app.create_initialization_options(),
            )
    except Exception as e:
        logger.error(f"Server error: {str(e)}")
        raise
