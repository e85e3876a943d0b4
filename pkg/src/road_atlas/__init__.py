"""Road-Atlas: multi-layer LiDAR road maps with 4-bit obstacle descriptors."""

import asyncio

from .server import main
from .version import __version__

__all__ = ["__version__", "main", "run"]


def run() -> None:
    """Run the Road-Atlas MCP server."""
    asyncio.run(main())
