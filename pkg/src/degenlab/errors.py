"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class DivergentIntegralError(InvalidInputError):
    """A weighted integral diverges at the degenerate endpoint."""


class ConstructionError(RuntimeError):
    """A derived object (e.g. the spatial profile bridge) failed its own checks."""

    def __init__(self, message, offending_x=None):
        super().__init__(message)
        self.offending_x = offending_x


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations.  Carries the last iterate."""

    def __init__(self, message, last_result=None, residuals=None):
        super().__init__(message)
        self.last_result = last_result
        self.residuals = residuals
