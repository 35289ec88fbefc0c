"""Gaussian-process inference from gradient observations in high dimension.

The Gram matrix of N gradient observations in D dimensions is never formed:
it is held as a Kronecker term plus a rank-N^2 correction, which makes exact
solves O(N^2 D + N^6) and matrix-vector products O(N^2 D).
"""

from .errors import (DivergenceError, DuplicatePointError, GradGPError, HessianSolveError,
                     KernelDomainError, LineSearchError, NumericalBreakdown, SingularCError,
                     SingularityError, SolverError)
from .gram import GradientDataset, StructuredGram, build_gram, materialize_dense, mvm
from .kernels import KernelSpec, Lengthscale, make_kernel
from .optim import OptimizerConfig, minimize
from .posterior import (LowRankHessian, hessian_solve, infer_function, infer_gradient,
                        infer_hessian, infer_optimum)
from .solvers import SolverConfig, SolverReport, solve, solve_cg, solve_woodbury

__version__ = "0.1.0"

__all__ = [
    "DivergenceError", "DuplicatePointError", "GradGPError", "HessianSolveError",
    "KernelDomainError", "LineSearchError", "NumericalBreakdown", "SingularCError",
    "SingularityError", "SolverError", "GradientDataset", "StructuredGram", "build_gram",
    "materialize_dense", "mvm", "KernelSpec", "Lengthscale", "make_kernel",
    "OptimizerConfig", "minimize", "LowRankHessian", "hessian_solve", "infer_function",
    "infer_gradient", "infer_hessian", "infer_optimum", "SolverConfig", "SolverReport",
    "solve", "solve_cg", "solve_woodbury",
]
