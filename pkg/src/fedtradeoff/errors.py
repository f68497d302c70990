"""Exception hierarchy shared across the package.

CLI exit-code map: ConfigurationError -> 1, NumericError (and subclasses) -> 2,
IO errors -> 3, failed bound check -> 4.
"""


class FedTradeoffError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FedTradeoffError):
    """Invalid configuration, dimension mismatch, or violated precondition."""


class NumericError(FedTradeoffError):
    """Non-finite values or a numerically diverged run."""


class EstimationError(NumericError):
    """Constant estimation failed (e.g. every sampled pair was degenerate)."""
