"""Exception hierarchy for mapweave."""

from typing import Any, Optional


class MapWeaveError(Exception):
    """Base class for all mapweave errors."""


class ShapeError(MapWeaveError, ValueError):
    """Raised when tensor or array dimensions do not agree."""

    def __init__(self, message: str, *shapes: tuple):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)


class ContractError(MapWeaveError):
    """Raised when a pre- or post-condition of an operation is violated."""


class ConfigurationError(MapWeaveError, ValueError):
    """Raised for invalid or infeasible configuration."""


class DegenerateGeometryError(MapWeaveError, ValueError):
    """Raised when geometry has no extent (e.g. all points coincide)."""


class EvaluationError(MapWeaveError):
    """Raised when a function under evaluation returns a non-finite value."""


class FormatError(MapWeaveError):
    """Raised when an on-disk document has a missing or unknown header."""


class NumericError(MapWeaveError):
    """Raised when training produces a non-finite value.

    Attributes:
        diagnostic: Context describing the offending frame
    """

    def __init__(self, message: str, diagnostic: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
