"""Exception hierarchy shared by every module."""

from __future__ import annotations


class TessError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(TessError, ValueError):
    """Operands do not have conforming shapes."""


class NumericError(TessError, ArithmeticError):
    """A non-finite value was produced or supplied."""


class ConfigError(TessError, ValueError):
    """Invalid parameters or configuration."""


class DataError(TessError):
    """A dataset could not be located or produced."""


class FormatError(DataError, ValueError):
    """A binary file is malformed; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
