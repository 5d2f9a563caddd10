"""Exception types raised across the package."""

from __future__ import annotations


class SessionFormatError(ValueError):
    """A session CSV could not be parsed.

    ``row`` is the 1-based line number in the file (header is line 1) and
    ``column`` the header name of the offending field, when known.
    """

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"line {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class HeaderError(SessionFormatError):
    pass


class CountError(SessionFormatError):
    pass


class ContextTagError(SessionFormatError):
    pass


class RowLengthError(SessionFormatError):
    pass


class LabelRangeError(SessionFormatError):
    pass


class EmptyDesignError(ValueError):
    """No usable rows remain after windowing."""


class InfeasibleError(RuntimeError):
    """Partitioning or matching cannot satisfy its preconditions."""


class DegenerateVarianceError(ValueError):
    """All standard deviations fed to a Z-test are zero."""


class ConfigError(ValueError):
    """A run configuration is invalid."""
