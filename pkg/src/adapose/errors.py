"""Exception types shared across the package."""


class AdaPoseError(Exception):
    """Base class for errors raised by adapose."""


class DimensionError(AdaPoseError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(AdaPoseError, ValueError):
    """A spec, preset or checkpoint does not describe a usable setup."""


class PreconditionError(AdaPoseError, ValueError):
    """An operation was called with inputs outside its contract."""


class NumericError(AdaPoseError, ArithmeticError):
    """Non-finite values where finite ones are required."""
