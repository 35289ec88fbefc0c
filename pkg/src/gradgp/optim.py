"""Gradient-surrogate optimisation loops (GP-H and GP-X) with a shared
strong-Wolfe line search.

GP-H infers the Hessian at the current iterate from a sliding window of
gradient observations and takes a quasi-Newton step. GP-X flips the
regression: it infers the position at which the gradient vanishes, using the
observed gradients as kernel inputs, and steps towards that estimate.
"""

from __future__ import annotations

import csv
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import GradGPError, LineSearchError
from .gram import GradientDataset
from .kernels import KernelSpec, make_kernel
from .posterior import (hessian_solve, infer_hessian, infer_optimum,
                        infer_optimum_quadratic)
from .solvers import SolverConfig, solve

TRACE_HEADER = "iter,f,grad_norm,alpha,flipped,wall_ms"


# ---------------------------------------------------------------------------
# line search


@dataclass
class LineSearchConfig:
    c1: float = 1e-4
    c2: float = 0.9
    max_bracket: int = 20
    max_zoom: int = 40

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class LineSearchResult:
    alpha: float
    phi: float
    slope: float
    evaluations: int
    wolfe: bool  # False when the best bracketed point is returned instead


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic interpolating two points and slopes, or None."""
    with np.errstate(over="ignore", invalid="ignore"):
        d1 = da + db - 3 * (fa - fb) / (a - b)
        disc = d1 * d1 - da * db
    if not np.isfinite(disc) or disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def line_search(phi: Callable[[float], tuple[float, float]], alpha0: float = 1.0,
                cfg: LineSearchConfig | None = None,
                phi0: tuple[float, float] | None = None) -> LineSearchResult:
    """Bracketing/zoom search for a step satisfying the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(value, slope)`` of the objective along the search
    direction. Raises LineSearchError if ``phi'(0) >= 0``.
    """
    cfg = cfg or LineSearchConfig()
    f0, d0 = phi0 if phi0 is not None else phi(0.0)
    if not d0 < 0:
        raise LineSearchError(f"not a descent direction: phi'(0) = {d0:g}")
    n_eval = 0
    best = (0.0, f0, d0)

    def evaluate(a):
        nonlocal n_eval, best
        n_eval += 1
        fa, da = phi(a)
        if not (np.isfinite(fa) and np.isfinite(da)):
            fa, da = math.inf, math.inf
        if fa < best[1]:
            best = (a, fa, da)
        return fa, da

    def armijo_fails(a, fa):
        return fa > f0 + cfg.c1 * a * d0

    def curvature_holds(da):
        return abs(da) <= -cfg.c2 * d0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        for _ in range(cfg.max_zoom):
            a = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * (right - left)
            if a is None or not (left + margin <= a <= right - margin):
                a = 0.5 * (lo + hi)
            fa, da = evaluate(a)
            if armijo_fails(a, fa) or fa >= f_lo:
                hi, f_hi, d_hi = a, fa, da
            else:
                if curvature_holds(da):
                    return LineSearchResult(a, fa, da, n_eval, True)
                if da * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, fa, da
            if abs(hi - lo) <= 1e-14 * max(abs(lo), 1.0):
                break
        return None

    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = float(alpha0)
    for i in range(cfg.max_bracket):
        fa, da = evaluate(a)
        if armijo_fails(a, fa) or (i > 0 and fa >= f_prev):
            res = zoom(a_prev, f_prev, d_prev, a, fa, da)
            break
        if curvature_holds(da):
            return LineSearchResult(a, fa, da, n_eval, True)
        if da >= 0:
            res = zoom(a, fa, da, a_prev, f_prev, d_prev)
            break
        a_prev, f_prev, d_prev = a, fa, da
        a *= 2.0
    else:
        res = None
    if res is not None:
        return res
    return LineSearchResult(best[0], best[1], best[2], n_eval, False)


# ---------------------------------------------------------------------------
# traces


@dataclass
class OptTrace:
    method: str = ""
    records: list = field(default_factory=list)
    x: np.ndarray | None = None
    converged: bool = False
    message: str = ""
    fallbacks: int = 0
    evaluations: int = 0

    def add(self, it, f, grad_norm, alpha, flipped, wall_ms):
        self.records.append({"iter": it, "f": float(f), "grad_norm": float(grad_norm),
                             "alpha": float(alpha), "flipped": bool(flipped),
                             "wall_ms": float(wall_ms)})

    @property
    def iterations(self) -> int:
        return self.records[-1]["iter"] if self.records else 0

    def grad_norms(self) -> np.ndarray:
        return np.array([r["grad_norm"] for r in self.records])

    def rel_grad_norms(self) -> np.ndarray:
        g = self.grad_norms()
        return g / g[0]

    def iterations_to(self, tol: float) -> int | None:
        """First iteration at which the relative gradient norm is <= tol."""
        hit = np.flatnonzero(self.rel_grad_norms() <= tol)
        return int(self.records[hit[0]]["iter"]) if hit.size else None

    def write_csv(self, path, timing: bool = True) -> None:
        """Write the trace; with ``timing=False`` the wall_ms column is left
        empty so that reruns produce identical files."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER.split(","))
            for r in self.records:
                wall = f"{r['wall_ms']:.17g}" if timing else ""
                w.writerow([r["iter"], f"{r['f']:.17g}", f"{r['grad_norm']:.17g}",
                            f"{r['alpha']:.17g}", int(r["flipped"]), wall])


# ---------------------------------------------------------------------------
# Algorithm 1


# Default squared lengthscales for the nonlinear experiments; the metric is
# their inverse, Lambda = I / ell^2.
FORWARD_SQ_LENGTHSCALE = 9.0
FLIPPED_SQ_LENGTHSCALE = 0.05


def default_forward_kernel() -> KernelSpec:
    """RBF with ``Lambda = I / 9`` for GP-H."""
    return make_kernel("squared_exponential", "stationary", 1.0 / FORWARD_SQ_LENGTHSCALE)


def default_flipped_kernel() -> KernelSpec:
    """RBF on gradient space with ``Lambda = 20 I`` for GP-X."""
    return make_kernel("squared_exponential", "stationary", 1.0 / FLIPPED_SQ_LENGTHSCALE)


@dataclass
class OptimizerConfig:
    mode: str = "GP-X"
    #: window size; None keeps the whole history
    window: int | None = 2
    forward_kernel: KernelSpec = field(default_factory=default_forward_kernel)
    flipped_kernel: KernelSpec = field(default_factory=default_flipped_kernel)
    line_search: LineSearchConfig = field(default_factory=LineSearchConfig)
    grad_tol: float = 1e-5
    max_iters: int = 1000
    #: exact step length -d'g / d'Ad, needs ``problem.hess_apply``
    exact_step: bool = False
    #: quadratic linear-algebra mode: closed-form flipped inference for GP-X,
    #: prior-mean gradient ``prior_grad`` for the GP-H polynomial model
    quadratic: bool = False
    prior_grad: np.ndarray | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.mode not in ("GP-H", "GP-X"):
            raise ValueError(f"mode must be GP-H or GP-X, got {self.mode!r}")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class GPState:
    x: np.ndarray
    f: float
    g: np.ndarray
    X: deque
    G: deque

    @classmethod
    def start(cls, x0, f0, g0, window):
        st = cls(np.asarray(x0, float), float(f0), np.asarray(g0, float),
                 deque(maxlen=window), deque(maxlen=window))
        st.X.append(st.x.copy())
        st.G.append(st.g.copy())
        return st

    def remember(self):
        self.X.append(self.x.copy())
        self.G.append(self.g.copy())


@dataclass
class StepResult:
    direction: np.ndarray
    flipped: bool = False
    fallback: bool = False


def _hessian_direction(state: GPState, cfg: OptimizerConfig) -> np.ndarray:
    X = np.column_stack(state.X)
    G = np.column_stack(state.G)
    data = GradientDataset(X, G, cfg.prior_grad)
    sol = solve(data, cfg.forward_kernel, cfg.solver)
    H = infer_hessian(state.x, sol.gram, sol.Z)
    return -hessian_solve(H, state.g)


def _optimum_direction(state: GPState, cfg: OptimizerConfig) -> np.ndarray:
    X = np.column_stack(state.X)
    G = np.column_stack(state.G)
    if cfg.quadratic:
        # the current point is the offset and prior mean; it carries no information
        keep = np.any(X != state.x[:, None], axis=0)
        if not keep.any():
            raise GradGPError("no observations besides the current point")
        lam = cfg.flipped_kernel.lam
        x_hat = infer_optimum_quadratic(state.x, state.g, X[:, keep], G[:, keep], lam)
    else:
        x_hat = infer_optimum(state.x, X, G, cfg.flipped_kernel, cfg.solver)
    return x_hat - state.x


def gp_step(state: GPState, cfg: OptimizerConfig) -> StepResult:
    """One direction update of Algorithm 1 at the freshly evaluated ``state.x``.

    GP-H infers the Hessian from the window *before* the new point is added;
    GP-X adds the new point first. Directions that fail to compute fall back
    to steepest descent; uphill directions are negated.
    """
    fallback = False
    if cfg.mode == "GP-X":
        state.remember()
    try:
        if cfg.mode == "GP-H":
            d = _hessian_direction(state, cfg)
        else:
            d = _optimum_direction(state, cfg)
        if not np.all(np.isfinite(d)) or not np.any(d):
            raise GradGPError("degenerate direction")
    except (GradGPError, np.linalg.LinAlgError):
        d = -state.g
        fallback = True
    if cfg.mode == "GP-H":
        state.remember()
    flipped = False
    if d @ state.g > 0:
        d = -d
        flipped = True
    return StepResult(d, flipped, fallback)


def minimize(problem, x0, cfg: OptimizerConfig | None = None) -> OptTrace:
    """Run Algorithm 1 from ``x0``.

    ``problem(x)`` returns ``(f, grad)``; with ``cfg.exact_step`` the problem
    must also provide ``hess_apply(v)``.
    """
    cfg = cfg or OptimizerConfig()
    t0 = time.perf_counter()
    trace = OptTrace(method=cfg.mode)
    x0 = np.asarray(x0, dtype=float)
    f, g = problem(x0)
    trace.evaluations = 1
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        trace.message = "non-finite objective at x0"
        return trace
    g0n = float(np.linalg.norm(g))
    state = GPState.start(x0, f, g, cfg.window)
    trace.add(0, f, g0n, 0.0, False, 0.0)
    d = -g
    it = 0
    while g0n > 0 and np.linalg.norm(state.g) > cfg.grad_tol * g0n and it < cfg.max_iters:
        it += 1
        alpha, f_new, g_new = _step_along(problem, state, d, cfg, trace)
        if alpha is None:
            trace.message = f"line search failed at iteration {it}"
            break
        state.x = state.x + alpha * d
        state.f, state.g = f_new, g_new
        if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
            trace.message = f"non-finite objective at iteration {it}"
            break
        step = gp_step(state, cfg)
        trace.fallbacks += step.fallback
        d = step.direction
        trace.add(it, state.f, np.linalg.norm(state.g), alpha, step.flipped,
                  1e3 * (time.perf_counter() - t0))
    trace.x = state.x
    trace.converged = bool(np.linalg.norm(state.g) <= cfg.grad_tol * g0n)
    if trace.converged:
        trace.message = "converged"
    elif not trace.message:
        trace.message = "iteration limit reached"
    return trace


def _step_along(problem, state, d, cfg, trace):
    """Step length along d: exact for quadratics, otherwise strong Wolfe.

    Returns (alpha, f, g) at the accepted point, or (None, ...) on failure.
    """
    slope0 = float(d @ state.g)
    if cfg.exact_step:
        Ad = problem.hess_apply(d)
        alpha = -slope0 / float(d @ Ad)
        f_new, g_new = problem(state.x + alpha * d)
        trace.evaluations += 1
        return alpha, f_new, g_new
    cache = {}

    def phi(a):
        fa, ga = problem(state.x + a * d)
        cache[a] = (fa, ga)
        return float(fa), float(ga @ d)

    try:
        res = line_search(phi, 1.0, cfg.line_search, phi0=(state.f, slope0))
    except LineSearchError:
        return None, None, None
    trace.evaluations += res.evaluations
    if res.alpha == 0.0:
        return None, None, None
    return (res.alpha, *cache[res.alpha])
