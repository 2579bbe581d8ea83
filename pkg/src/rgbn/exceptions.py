"""Exception types shared across the package."""


class RgbnError(Exception):
    """Base class for package errors."""


class ParameterError(RgbnError, ValueError):
    """A distribution or model parameter is outside its domain."""


class ShapeError(RgbnError, ValueError):
    """Array dimensions do not match the declared contract."""


class DegenerateAllocationError(RgbnError, ValueError):
    """A positive count must be allocated but every weight is zero."""


class NumericError(RgbnError, ArithmeticError):
    """A computation produced a non-finite value."""


class ConfigError(RgbnError, ValueError):
    """Invalid run or model configuration (maps to CLI exit code 2)."""


class DatasetError(RgbnError, ValueError):
    """Malformed or empty dataset file."""
