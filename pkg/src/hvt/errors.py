"""Exception hierarchy shared across the package."""


class HvtError(Exception):
    """Base class for all package errors."""


class ShapeError(HvtError, ValueError):
    pass


class NumericError(HvtError, ArithmeticError):
    """A NaN appeared; ``op`` names the operation that produced it."""

    def __init__(self, op, message=None):
        self.op = op
        super().__init__(message or f"NaN produced by op '{op}'")


class ConfigError(HvtError, ValueError):
    pass


class DataError(HvtError, ValueError):
    pass


class FormatError(DataError):
    """Malformed on-disk file (IDX dataset or checkpoint)."""
