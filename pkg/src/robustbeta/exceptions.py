"""Exception types shared across the package."""


class RobustBetaError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(RobustBetaError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InfeasibleTransformError(RobustBetaError):
    """A power transform of the beta parameters left the parameter space.

    Carries the indices of the offending observations so callers can report
    exactly which data points break the feasibility conditions.
    """

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = [] if indices is None else list(indices)


class NonIntegrableError(RobustBetaError):
    """A powered beta density is not integrable (unbounded-density case)."""


class ConvergenceError(RobustBetaError):
    """The optimizer failed to converge.  Carries the best iterate found."""

    def __init__(self, message, best_theta=None, best_value=None, iterations=0):
        super().__init__(message)
        self.best_theta = best_theta
        self.best_value = best_value
        self.iterations = iterations


class SingularMatrixError(RobustBetaError):
    """A matrix required by inference is singular or numerically near-singular."""


class SpecificationError(RobustBetaError, ValueError):
    """The model specification (data, design matrices, links) is invalid."""
