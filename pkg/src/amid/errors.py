"""Exception types shared across the package."""


class AmidError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(AmidError, ValueError):
    """Bad shapes, bad settings, contradictory flags."""


class UsageError(AmidError, RuntimeError):
    """An API was called in a state where it cannot work."""


class DataError(AmidError, ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(AmidError, ArithmeticError):
    """Non-finite values or undefined numerics (zero-norm rows, log of 0)."""
