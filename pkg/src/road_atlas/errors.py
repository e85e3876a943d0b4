"""Exception types raised by the Road-Atlas engine."""

from typing import Optional


class RoadAtlasError(Exception):
    """Base class for all Road-Atlas errors."""


class MalformedInputError(RoadAtlasError, ValueError):
    """Input data (frames, pose files, scene files) cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigurationError(RoadAtlasError, ValueError):
    """A parameter or a combination of parameters is invalid."""


class AtlasFormatError(RoadAtlasError, ValueError):
    """A map file could not be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnknownKeyframeError(RoadAtlasError, KeyError):
    """A keyframe id is not registered in the atlas."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown keyframe"


class LocalizationError(RoadAtlasError, RuntimeError):
    """A frame cannot be localized (empty map region, too few points)."""


class PlanningError(RoadAtlasError, ValueError):
    """A planning query references invalid nodes or cannot be snapped."""
