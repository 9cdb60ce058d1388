from __future__ import annotations


class RoutineMinerError(Exception):
    """Base class for data errors raised by the pipeline."""


class ParseError(RoutineMinerError, ValueError):
    """A malformed input line. ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: int | None = None, source: str | None = None):
        self.message = message
        self.lineno = lineno
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if lineno is not None:
            where += f"line {lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)


class SchemaVersionError(RoutineMinerError):
    """An artifact was written by a newer, incompatible schema."""
