"""Handler for atlas resource access."""

import json
import urllib.parse
from typing import Any, Dict, Sequence

from mcp.types import TextContent, Tool

from .base import BaseHandler


class AtlasResourceHandler(BaseHandler):
    """Handler serving the storage report of a map through atlas:// URIs."""

    name = "atlas_resource"
    description = "Handles resource requests for saved atlas files."

    def get_tool_description(self) -> Tool:
        """Placeholder; this handler only serves resources."""
        return Tool(
            name=self.name,
            description=self.description,
            inputSchema={
                "type": "object",
                "properties": {},
            },
        )

    async def run_tool(self, arguments: Dict[str, Any]) -> Sequence[TextContent]:
        """Placeholder; this handler only serves resources."""
        return []

    async def handle_resource(self, uri: str) -> TextContent:
        """Storage report of the map at atlas://{path}.

        Raises:
            ValueError: If the URI format is invalid.
        """
        map_path = self._parse_uri(uri)
        report = self.service.map_stats(map_path)
        return TextContent(type="text", text=json.dumps(report.model_dump(), indent=2))

    def _parse_uri(self, uri: str) -> str:
        parsed = urllib.parse.urlparse(uri)
        if parsed.scheme != "atlas":
            raise ValueError(f"Invalid URI scheme: {parsed.scheme}")
        # atlas:///abs.lra keeps the leading slash; atlas://rel.lra uses netloc.
        path = urllib.parse.unquote(parsed.netloc + parsed.path)
        if not path:
            raise ValueError(f"Invalid URI: {uri}")
        return path
