"""Exception hierarchy shared across the package.

Every error raised by this package derives from :class:`OoptError` so
callers (and the CLI) can map failures onto coarse categories: usage
problems, bad input data, and numeric breakdowns.
"""

from __future__ import annotations


class OoptError(Exception):
    """Base class for all package errors."""


class UsageError(OoptError):
    """Caller misuse: bad argument combinations, unknown options."""


class DataError(OoptError):
    """Input data is malformed, inconsistent, or unreadable."""


class NumericError(OoptError):
    """A computation lost numeric validity (NaN/Inf, divergence)."""


class InvalidInputError(DataError):
    """Array input violates a precondition (shape, dtype, finiteness)."""


class InputTooSmallError(DataError):
    """Fewer points than a query or algorithm requires."""


class DegenerateNeighborhoodError(NumericError):
    """All displacement vectors of a neighborhood have zero length."""


class UndefinedLossError(NumericError):
    """Loss requested over an empty (fully masked) label set."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""


class DegenerateTriangleError(NumericError):
    """A triangle with zero area where a normal direction is needed."""


class ContractError(UsageError):
    """Arguments violate a documented call contract (shape mismatch)."""


class ConfigError(UsageError):
    """Configuration key/value outside the documented ranges."""


class FileFormatError(DataError):
    """A geometry or parameter file violates its format."""

    def __init__(self, message: str, *, path: str | None = None,
                 line: int | None = None, offset: int | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}: "
        if line is not None:
            loc += f"line {line}: "
        if offset is not None:
            loc += f"byte {offset}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedFormatError(FileFormatError):
    """File is recognizably valid but uses an unsupported variant."""


class SchemaError(DataError):
    """Parameter file disagrees with the expected tensor schema."""
