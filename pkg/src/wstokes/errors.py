"""Exception types shared across the package."""


class PointLocationError(LookupError):
    """A query point lies outside the mesh beyond the admitted tolerance."""


class SingularWeightError(ArithmeticError):
    """A weight was evaluated at a point of its singular set.

    Raised when a negative-exponent distance weight with epsilon = 0 is
    evaluated exactly at its singularity; regularize with epsilon > 0 or
    use a quadrature that avoids the singular set.
    """


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed; carries diagnostic details."""


class NonConvergenceError(SolverError):
    """An iteration ran out of steps; carries the residual/increment trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        # a residual list or a structured iteration-history object
        self.trace = trace if trace is not None else []
