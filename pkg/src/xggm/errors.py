"""Exception types shared across the package."""


class XggmError(Exception):
    """Base class for all package errors."""


class DimensionError(XggmError, ValueError):
    """Array shapes do not fit together."""


class ParameterError(XggmError, ValueError):
    """A scalar parameter is outside its admissible range."""


class ContractError(XggmError, ValueError):
    """An operation was called in violation of its preconditions."""


class ConfigError(XggmError, ValueError):
    """A configuration is invalid, infeasible, or inconsistent with its data."""


class NumericError(XggmError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""
