"""Tests for the Road-Atlas MCP server."""

import json
from typing import List

import pytest
from mcp.server import stdio
from mcp.types import TextContent, Tool
from pytest_mock import MockerFixture

from road_atlas.server import (
    app,
    build_map_handler,
    call_tool,
    export_map_handler,
    list_resource_templates,
    list_resources,
    list_tools,
    localize_frames_handler,
    main,
    map_stats_handler,
    plan_route_handler,
    read_resource,
    simulate_scene_handler,
)


@pytest.mark.asyncio
async def test_list_tools():
    """Test tool listing."""
    tools: List[Tool] = await list_tools()
    assert [tool.name for tool in tools] == [
        "build_map",
        "localize_frames",
        "plan_route",
        "map_stats",
        "simulate_scene",
        "export_map",
    ]
    stats_tool = tools[3]
    assert stats_tool.inputSchema["required"] == ["map_path"]


@pytest.mark.asyncio
async def test_unknown_tool_handler():
    """Test handling of unknown tool name."""
    with pytest.raises(ValueError) as excinfo:
        await call_tool("unknown_tool", {})
    assert "Unknown tool: unknown_tool" in str(excinfo.value)


@pytest.mark.asyncio
async def test_call_tool_map_stats(overpass_map):
    """Test map_stats through call_tool."""
    result = await call_tool("map_stats", {"map_path": overpass_map})
    assert len(result) == 1
    assert isinstance(result[0], TextContent)
    report = json.loads(result[0].text)
    assert report["cells"] == 21 * 46
    assert report["multi_layer_cells"] == 5 * 21


@pytest.mark.asyncio
async def test_call_tool_plan_route(overpass_map):
    result = await call_tool(
        "plan_route",
        {"map_path": overpass_map, "start": [0.5, 0.5, 0.0], "goal": [0.5, -4.5, 5.0]},
    )
    assert json.loads(result[0].text)["result"] == "ok"


@pytest.mark.asyncio
async def test_call_tool_error_handling(tmp_path):
    """A failing operation surfaces as RuntimeError."""
    with pytest.raises(RuntimeError) as excinfo:
        await call_tool("map_stats", {"map_path": str(tmp_path / "missing.lra")})
    assert "Cannot read atlas file" in str(excinfo.value)
    with pytest.raises(RuntimeError):
        await call_tool("plan_route", {"map_path": "m.lra", "start": [0, 0]})


@pytest.mark.asyncio
async def test_call_tool_all_handlers(mocker: MockerFixture):
    """Every tool name dispatches to its handler."""
    handlers = [
        build_map_handler,
        localize_frames_handler,
        plan_route_handler,
        map_stats_handler,
        simulate_scene_handler,
        export_map_handler,
    ]
    for handler in handlers:
        mock = mocker.patch.object(handler, "run_tool")
        mock.return_value = [TextContent(type="text", text="{}")]
        result = await call_tool(handler.name, {"x": 1})
        mock.assert_called_once_with({"x": 1})
        assert result[0].text == "{}"


@pytest.mark.asyncio
async def test_read_resource(overpass_map):
    content = await read_resource(f"atlas://{overpass_map}")
    assert json.loads(content.text)["surface_cells"] == 21 * 46


@pytest.mark.asyncio
async def test_read_resource_errors(tmp_path):
    with pytest.raises(ValueError, match="Invalid URI scheme"):
        await read_resource("file:///tmp/map.lra")
    with pytest.raises(RuntimeError, match="Error reading resource"):
        await read_resource(f"atlas://{tmp_path / 'missing.lra'}")


@pytest.mark.asyncio
async def test_resource_listing():
    resources = await list_resources()
    assert str(resources[0].uri).startswith("atlas://")
    templates = await list_resource_templates()
    assert templates[0].uriTemplate == "atlas://{path}"


@pytest.mark.asyncio
async def test_main_stdio_server_error(mocker: MockerFixture):
    """Test main function with stdio_server error."""
    mock_stdio = mocker.patch.object(stdio, "stdio_server")
    mock_stdio.side_effect = Exception("Stdio server error")

    with pytest.raises(Exception) as excinfo:
        await main()
    assert "Stdio server error" in str(excinfo.value)


@pytest.mark.asyncio
async def test_main_run_error(mocker: MockerFixture):
    """Test main function with app.run error."""
    mock_stdio = mocker.patch.object(stdio, "stdio_server")
    mock_context = mocker.MagicMock()
    mock_context.__aenter__.return_value = (mocker.MagicMock(), mocker.MagicMock())
    mock_stdio.return_value = mock_context

    mock_run = mocker.patch.object(app, "run")
    mock_run.side_effect = Exception("App run error")

    with pytest.raises(Exception) as excinfo:
        await main()
    assert "App run error" in str(excinfo.value)
