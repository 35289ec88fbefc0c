"""Solvers for the gradient Gram system ``[grad K grad'] vec(Z) = vec(G)``.

Three paths are provided:

* ``woodbury``: exact solve through the matrix inversion lemma with an
  N^2 x N^2 inner system, cost O(N^2 D + N^6).
* ``cg``: matrix-free conjugate gradients using only :func:`gram.mvm`.
* ``quadratic-analytic``: closed form for the second-order polynomial kernel
  with a prior-mean gradient, cost O(N^2 D + N^3).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import NumericalBreakdown, SingularCError, SolverError
from .gram import (GradientDataset, StructuredGram, apply_C_inverse, apply_L,
                   apply_Lt, build_gram, mvm, vec)
from .kernels import KernelSpec, Polynomial

DEFAULT_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
REPORT_HEADER = "path,iterations,residual,jitter,wall_ms"
REFINE_STEPS = 3
#: a Woodbury result with a larger relative residual is rejected as unusable
WOODBURY_ACCEPT = 1e-6


@dataclass
class SolverConfig:
    rel_tolerance: float = 1e-6
    max_iterations: int | None = None  # None means D * N
    jitter_ladder: tuple = DEFAULT_LADDER
    path_preference: str = "auto"
    #: CG preconditioner hook, maps a D x N residual to a D x N matrix
    preconditioner: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")
        ladder = tuple(float(j) for j in self.jitter_ladder)
        if not ladder or any(b < a for a, b in zip(ladder, ladder[1:])) or ladder[0] < 0:
            raise ValueError("jitter ladder must be non-empty, non-negative and non-decreasing")
        self.jitter_ladder = ladder
        if self.path_preference not in ("auto", "woodbury", "cg"):
            raise ValueError(f"unknown path preference {self.path_preference!r}")


@dataclass
class SolverReport:
    path: str
    iterations: int
    residual: float
    jitter: float = 0.0
    wall_ms: float = 0.0
    converged: bool = True
    #: floats held by the solver (work arrays plus gram), CG only
    storage: int | None = None

    def csv_row(self, timing: bool = True) -> str:
        wall = f"{self.wall_ms:.17g}" if timing else ""
        return f"{self.path},{self.iterations},{self.residual:.17g},{self.jitter:.17g},{wall}"


@dataclass
class PosteriorSolution:
    Z: np.ndarray
    report: SolverReport
    gram: StructuredGram | None = None
    #: inner N x N solution of the Woodbury / analytic paths
    Q: np.ndarray | None = None


def relative_residual(gram: StructuredGram, Z: np.ndarray, G: np.ndarray) -> float:
    nG = np.linalg.norm(G)
    if nG == 0:
        return float(np.linalg.norm(Z))
    return float(np.linalg.norm(mvm(gram, Z) - G) / nG)


def _scale(A: np.ndarray) -> float:
    s = float(np.mean(np.abs(np.diag(A))))
    return s if s > 0 else 1.0


def _cholesky_ladder(A: np.ndarray, ladder) -> tuple:
    """Cholesky factor of A + j * scale * I for the first j on the ladder that works."""
    if not np.all(np.isfinite(A)):
        raise SolverError("K'_eff has non-finite entries")
    scale = _scale(A)
    n = A.shape[0]
    for j in ladder:
        try:
            cf = scipy.linalg.cho_factor(A + j * scale * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
        d = np.abs(np.diag(cf[0]))
        if d.min() > 1e-12 * d.max():
            return cf, j
    raise SolverError("K'_eff is singular after exhausting the jitter ladder")


def _sym_solve_ladder(A: np.ndarray, b: np.ndarray, ladder) -> tuple[np.ndarray, float]:
    """Symmetric indefinite solve, escalating diagonal jitter on failure."""
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise SolverError("inner Woodbury system has non-finite entries")
    scale = _scale(A)
    n = A.shape[0]
    for j in ladder:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            try:
                x = scipy.linalg.solve(A + j * scale * np.eye(n), b, assume_a="sym")
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
                continue
        if not np.all(np.isfinite(x)):
            continue
        if j > 0:
            # iterative refinement against the unjittered matrix; converges to
            # a solution when the system is singular but consistent
            Aj = A + j * scale * np.eye(n)
            for _ in range(REFINE_STEPS):
                x = x + scipy.linalg.solve(Aj, b - A @ x, assume_a="sym",
                                           check_finite=False)
        return x, j
    raise SolverError("inner Woodbury system is singular after exhausting the jitter ladder")


def _contract_matrix(fn, N: int) -> np.ndarray:
    """Explicit N^2 x N^2 matrix of a linear N x N -> N x N contract."""
    out = np.empty((N * N, N * N))
    E = np.zeros((N, N))
    for k in range(N * N):
        E.flat[:] = 0.0
        E[k % N, k // N] = 1.0  # column-major basis element
        out[:, k] = vec(fn(E))
    return out


def inner_matrix(gram: StructuredGram, Kp_inv: np.ndarray) -> np.ndarray:
    """The N^2 x N^2 matrix ``C^{-1} + U^T B^{-1} U`` of the Woodbury inner solve."""
    N = gram.N
    Kpp = -gram.Kpp if gram.stationary else gram.Kpp
    Cinv = _contract_matrix(lambda M: apply_C_inverse(Kpp, M), N)
    S = gram.Xt.T @ gram.LXt
    S = 0.5 * (S + S.T)
    K = np.kron(Kp_inv, S)
    if gram.stationary:
        Lmat = _contract_matrix(apply_L, N)
        K = Lmat.T @ K @ Lmat
    A = Cinv + K
    return 0.5 * (A + A.T)


def solve_woodbury(gram: StructuredGram, G: np.ndarray,
                   cfg: SolverConfig | None = None) -> PosteriorSolution:
    """Exact solve via the matrix inversion lemma (requires all K''_eff nonzero)."""
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    G = np.asarray(G, dtype=float)
    if G.shape != (gram.D, gram.N):
        raise ValueError(f"G has shape {G.shape}, expected {(gram.D, gram.N)}")
    if np.any(gram.Kpp == 0):
        raise SingularCError("K''_eff has a zero entry, so C is singular; use the CG path")

    cf, jit_k = _cholesky_ladder(gram.Kp, cfg.jitter_ladder)
    # G K'^{-1} via the symmetric factor: (K'^{-1} G^T)^T
    GKi = scipy.linalg.cho_solve(cf, G.T).T
    Kp_inv = scipy.linalg.cho_solve(cf, np.eye(gram.N))
    Kp_inv = 0.5 * (Kp_inv + Kp_inv.T)

    T = gram.Xt.T @ GKi
    if gram.stationary:
        T = apply_Lt(T)
    # symmetric scaling by sqrt|K''|: C^{-1} becomes a signed permutation, so
    # near-zero K'' entries (distant points) no longer swamp the inner system
    w = np.sqrt(np.abs(vec(gram.Kpp)))
    A = w[:, None] * inner_matrix(gram, Kp_inv) * w[None, :]
    y, jit_in = _sym_solve_ladder(A, w * vec(T), cfg.jitter_ladder)
    q = w * y
    Q = q.reshape(gram.N, gram.N, order="F")

    corr = apply_L(Q) if gram.stationary else Q
    Z = gram.lam.solve(GKi) - gram.Xt @ (corr @ Kp_inv)
    res = relative_residual(gram, Z, G)
    if not res <= WOODBURY_ACCEPT:
        raise SolverError(f"Woodbury residual {res:.2e} after jitter "
                          f"{max(jit_k, jit_in):g}; K'_eff is effectively singular, use CG")
    report = SolverReport("woodbury", 1, res, max(jit_k, jit_in),
                          1e3 * (time.perf_counter() - t0))
    return PosteriorSolution(Z, report, gram, Q)


def solve_cg(gram: StructuredGram, G: np.ndarray,
             cfg: SolverConfig | None = None, Z0: np.ndarray | None = None) -> PosteriorSolution:
    """Conjugate gradients on the SPD Gram system using only matrix-free products.

    Returns the last iterate with ``report.converged = False`` when the
    iteration budget runs out.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    G = np.asarray(G, dtype=float)
    if G.shape != (gram.D, gram.N):
        raise ValueError(f"G has shape {G.shape}, expected {(gram.D, gram.N)}")
    max_it = cfg.max_iterations if cfg.max_iterations is not None else gram.D * gram.N
    precond = cfg.preconditioner or (lambda R: R)

    if not np.all(np.isfinite(G)):
        raise NumericalBreakdown("non-finite right-hand side", 0)
    nG = np.linalg.norm(G)
    Z = np.zeros_like(G) if Z0 is None else np.array(Z0, dtype=float)
    R = G - mvm(gram, Z) if Z0 is not None else G.copy()
    storage = 4 * G.size + gram.storage  # Z, R, P, AP and the gram itself
    if nG == 0:
        return PosteriorSolution(Z, SolverReport("cg", 0, 0.0, storage=storage), gram)

    Y = precond(R)
    P = Y.copy()
    ry = float(np.vdot(R, Y))
    it = 0
    rel = np.linalg.norm(R) / nG
    while rel > cfg.rel_tolerance and it < max_it:
        AP = mvm(gram, P)
        pAp = float(np.vdot(P, AP))
        if not np.isfinite(pAp) or pAp <= 0:
            raise NumericalBreakdown(f"CG breakdown: p'Ap = {pAp:g}", it)
        alpha = ry / pAp
        Z += alpha * P
        R -= alpha * AP
        it += 1
        if not np.all(np.isfinite(R)):
            raise NumericalBreakdown("non-finite CG residual", it)
        rel = np.linalg.norm(R) / nG
        Y = precond(R)
        ry_new = float(np.vdot(R, Y))
        P *= ry_new / ry
        P += Y
        ry = ry_new
    res = relative_residual(gram, Z, G)
    report = SolverReport("cg", it, res, 0.0, 1e3 * (time.perf_counter() - t0),
                          converged=bool(rel <= cfg.rel_tolerance), storage=storage)
    return PosteriorSolution(Z, report, gram)


def _is_quadratic(spec: KernelSpec) -> bool:
    return isinstance(spec.family, Polynomial) and spec.family.p == 2


def solve_quadratic_analytic(dataset: GradientDataset, spec: KernelSpec,
                             cfg: SolverConfig | None = None) -> PosteriorSolution:
    """Closed-form representers for the second-order polynomial kernel.

    With ``K' = Xt^T L Xt`` the inner solution is
    ``Q = 1/2 K'^{-1} Xt^T (G - g_c)`` and
    ``Z = L^{-1} (G - g_c) K'^{-1} - Xt Q K'^{-1}``.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    if not _is_quadratic(spec):
        raise ValueError("the analytic path needs the second-order polynomial kernel")
    gram = build_gram(dataset, spec)
    Gc = dataset.rhs()
    try:
        cf = scipy.linalg.cho_factor(gram.Kp, lower=True)
    except np.linalg.LinAlgError:
        raise SolverError("Xt^T L Xt is rank deficient: observations are not independent")
    d = np.abs(np.diag(cf[0]))
    # pivots are square roots of Schur complements: a ratio of 1e-6 is cond ~ 1e12
    if d.min() <= 1e-6 * d.max():
        raise SolverError("Xt^T L Xt is rank deficient: observations are not independent")
    Kp_inv = scipy.linalg.cho_solve(cf, np.eye(gram.N))
    XG = gram.Xt.T @ Gc
    Q = 0.5 * Kp_inv @ XG
    Z = gram.lam.solve(Gc @ Kp_inv) - gram.Xt @ (Q @ Kp_inv)
    report = SolverReport("quadratic-analytic", 1, relative_residual(gram, Z, Gc), 0.0,
                          1e3 * (time.perf_counter() - t0))
    return PosteriorSolution(Z, report, gram, Q)


def quadratic_identity_residual(sol: PosteriorSolution, dataset: GradientDataset) -> float:
    """``||Q^T + K' Q K'^{-1} - T||_F / ||T||_F`` with ``T = Xt^T (G - g_c) K'^{-1}``."""
    gram = sol.gram
    Kp_inv = np.linalg.inv(gram.Kp)
    T = gram.Xt.T @ dataset.rhs() @ Kp_inv
    lhs = sol.Q.T + gram.Kp @ sol.Q @ Kp_inv
    return float(np.linalg.norm(lhs - T) / max(np.linalg.norm(T), 1e-30))


def solve(dataset: GradientDataset, spec: KernelSpec,
          cfg: SolverConfig | None = None) -> PosteriorSolution:
    """Pick a path: analytic for the quadratic kernel, Woodbury when N^2 <= D,
    otherwise CG. Woodbury failures fall back to CG."""
    cfg = cfg or SolverConfig()
    D, N = dataset.D, dataset.N
    if cfg.path_preference == "auto" and _is_quadratic(spec) and N <= D:
        try:
            return solve_quadratic_analytic(dataset, spec, cfg)
        except SolverError:
            pass
    gram = build_gram(dataset, spec)
    G = dataset.rhs()
    use_woodbury = (cfg.path_preference == "woodbury"
                    or (cfg.path_preference == "auto" and N * N <= D))
    if use_woodbury:
        try:
            return solve_woodbury(gram, G, cfg)
        except SolverError:
            if cfg.path_preference == "woodbury":
                raise
    return solve_cg(gram, G, cfg)
