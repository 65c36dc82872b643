"""Exception types shared across the package."""


class ResourceCapError(ValueError):
    """A requested graph or state space exceeds a configured size cap."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InsufficientDataError(ValueError):
    """A time series is too short for the requested estimate."""
