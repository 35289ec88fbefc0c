"""Exception types raised across the package."""


class GradGPError(Exception):
    """Base class for all package errors."""


class KernelDomainError(GradGPError, ValueError):
    """Kernel evaluated outside its domain (e.g. negative squared distance)."""


class SingularityError(GradGPError, ArithmeticError):
    """A kernel derivative diverges at the requested argument."""


class DuplicatePointError(GradGPError, ValueError):
    """Two evaluation points coincide, which makes the Gram matrix singular."""

    def __init__(self, a, b):
        super().__init__(f"evaluation points {a} and {b} coincide (r < 1e-12)")
        self.pair = (a, b)


class SolverError(GradGPError, ArithmeticError):
    """Linear solve failed even after exhausting the jitter ladder."""


class SingularCError(SolverError):
    """The shuffled second-derivative operator C has a zero entry and cannot
    be inverted; use the conjugate-gradient path instead."""


class NumericalBreakdown(SolverError):
    """Non-finite or non-positive curvature encountered in an iteration."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class HessianSolveError(SolverError):
    """Low-rank Hessian could not be inverted after damping."""


class LineSearchError(GradGPError, ValueError):
    """Line search called with a non-descent direction."""


class DivergenceError(GradGPError, FloatingPointError):
    """Integrator state became non-finite."""
