"""Exception types shared across the package."""


class VarsolveError(Exception):
    """Base class for all package errors."""


class ConfigError(VarsolveError):
    """Invalid configuration or mismatched dimensions.

    ``key`` names the offending configuration key when there is one.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NumericFailure(VarsolveError):
    """A loss, gradient or coefficient evaluated to a non-finite value."""

    def __init__(self, message, batch_index=None, outer=None, inner=None, points=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.outer = outer
        self.inner = inner
        self.points = points


class DegenerateNetwork(NumericFailure):
    """The network output collapsed to (numerically) zero norm."""


class UndefinedRelativeError(VarsolveError):
    """Relative error requested where the reference is (near) zero."""


class OracleConvergenceError(VarsolveError):
    """A reference solver did not reach its tolerance."""
