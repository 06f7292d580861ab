"""Exception types shared across the package."""


class RcacError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(RcacError, ValueError):
    """Shapes, hyperparameters or config values that cannot work together."""


class NumericError(RcacError, FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


class UsageError(RcacError, RuntimeError):
    """An object was used out of order, e.g. stepping a finished episode."""
