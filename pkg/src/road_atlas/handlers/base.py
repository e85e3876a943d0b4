"""Base handler for the Road-Atlas tool server."""

import abc
import json
import logging
import traceback
from typing import Any, Callable, Dict, Sequence

from mcp.types import TextContent, Tool
from pydantic import BaseModel

from ..service import RoadAtlasService

logger = logging.getLogger("road-atlas")


class BaseHandler(abc.ABC):
    """Base class for handlers.

    Subclasses set ``name`` and ``description``, describe their input schema in
    `get_tool_description()` and implement `run_tool()` on top of the shared
    `RoadAtlasService`.

    Attributes:
        name (str): The name of the tool.
        description (str): A description of the tool.
        service (RoadAtlasService): Pipeline operations backing the tool.
    """

    name: str = ""
    description: str = ""

    def __init__(self, service: RoadAtlasService | None = None):
        """Initialize the handler.

        Args:
            service: The service instance to use. If None, a new one is created.
        """
        self.service = service if service is not None else RoadAtlasService()

    @abc.abstractmethod
    def get_tool_description(self) -> Tool:
        """Get the tool description, including its JSON input schema."""
        raise NotImplementedError("Subclasses must implement get_tool_description()")

    @abc.abstractmethod
    async def run_tool(self, arguments: Dict[str, Any]) -> Sequence[TextContent]:
        """Execute the tool with given arguments.

        Raises:
            RuntimeError: If there is an error executing the tool.
        """
        raise NotImplementedError("Subclasses must implement run_tool()")

    def _respond(
        self,
        request_model: type[BaseModel],
        operation: Callable[[Any], Any],
        arguments: Dict[str, Any],
    ) -> Sequence[TextContent]:
        """Validate ``arguments``, run ``operation`` and render its result as JSON."""
        try:
            request = request_model.model_validate(arguments)
            result = operation(request)
            if isinstance(result, BaseModel):
                result = result.model_dump()
            return [TextContent(type="text", text=json.dumps(result, indent=2))]
        except Exception as e:
            logger.error(f"Error processing request: {str(e)}")
            logger.error(traceback.format_exc())
            raise RuntimeError(f"Error processing request: {str(e)}") from e
