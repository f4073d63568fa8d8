"""Exception types shared across the package."""


class BetaHmmError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(BetaHmmError):
    """A model parameter or function argument violates its contract."""


class DataError(BetaHmmError):
    """Input data is malformed, inconsistent, or insufficient."""


class NumericalError(BetaHmmError):
    """A numerical procedure failed (rank deficiency, divergence, overflow)."""
