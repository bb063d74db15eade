"""Shared exception types."""


class EpicastError(Exception):
    """Base class for all library errors."""


class ParseError(EpicastError):
    """A line or row of an input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(EpicastError):
    """Input parsed but violates an invariant (duplicate id, NaN, ...)."""


class DimensionError(EpicastError):
    """Matrix or vector dimensions are inconsistent."""


class CoverageError(EpicastError):
    """A series does not overlap the requested date range."""
