"""Desk-scale experiment drivers shared by the command line and the tests.

Each driver is a pure function of its arguments and seed and returns plain
arrays; writing files is left to the caller.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .gram import GradientDataset, build_gram
from .hmc import GpgRun, HmcConfig, run_banana
from .kernels import KernelSpec, make_kernel
from .optim import OptimizerConfig, minimize
from .posterior import infer_function
from .problems import (QuadraticProblem, bfgs_baseline, cg_baseline, relaxed_rosenbrock,
                       sample_start)
from .solvers import SolverConfig, SolverReport, solve_cg, solve_woodbury


def iterations_to(curve, tol: float) -> int | None:
    """First index at which a relative-norm curve reaches ``tol``."""
    hits = np.flatnonzero(np.asarray(curve) <= tol)
    return int(hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# linear algebra: quadratic objective


@dataclass
class LinResult:
    problem: QuadraticProblem
    curves: dict  # method -> relative gradient norms, iteration 0 first
    traces: dict = field(default_factory=dict)  # GP methods -> OptTrace

    def iterations(self, tol: float = 1e-5) -> dict:
        return {m: iterations_to(c, tol) for m, c in self.curves.items()}


def quadratic_gp_configs(problem: QuadraticProblem, tol: float = 1e-5,
                         max_iters: int | None = None) -> dict:
    """GP-X and GP-H set up as linear solvers: full window, exact steps and the
    second-order polynomial kernel with unit metric. GP-H uses the fixed
    offset c = 0 with the prior-mean gradient g(0) = -b."""
    D = problem.D
    quad = make_kernel("polynomial", "dot", 1.0, np.zeros(D), p=2)
    max_iters = max_iters or 10 * D
    common = dict(window=None, exact_step=True, quadratic=True, grad_tol=tol,
                  max_iters=max_iters)
    return {
        "GP-X": OptimizerConfig(mode="GP-X", flipped_kernel=quad, **common),
        "GP-H": OptimizerConfig(mode="GP-H", forward_kernel=quad,
                                prior_grad=problem(np.zeros(D))[1], **common),
    }


def run_lin(D: int = 100, seed: int = 0, tol: float = 1e-5,
            methods=("CG", "GP-X", "GP-H")) -> LinResult:
    rng = np.random.default_rng(seed)
    problem = QuadraticProblem.from_spectrum(D, rng)
    x0 = sample_start(D, rng)
    curves, traces = {}, {}
    if "CG" in methods:
        curves["CG"] = np.array(cg_baseline(problem.hess_apply, problem.b, x0, tol).residuals)
    cfgs = quadratic_gp_configs(problem, tol)
    for m in ("GP-X", "GP-H"):
        if m in methods:
            traces[m] = minimize(problem, x0, cfgs[m])
            curves[m] = traces[m].rel_grad_norms()
    return LinResult(problem, curves, traces)


# ---------------------------------------------------------------------------
# nonlinear: relaxed Rosenbrock


def rosenbrock_start(D: int, seed: int) -> np.ndarray:
    """Seeded standard-normal starting point."""
    return np.random.default_rng(seed).standard_normal(D)


def run_nonlin(D: int = 100, seed: int = 0, tol: float = 1e-5, window: int = 2,
               max_iters: int = 1000, methods=("BFGS", "GP-H", "GP-X")) -> dict:
    """Return ``{method: OptTrace}`` from a common seeded start."""
    x0 = rosenbrock_start(D, seed)
    out = {}
    if "BFGS" in methods:
        out["BFGS"] = bfgs_baseline(relaxed_rosenbrock, x0, grad_tol=tol, max_iters=max_iters)
    for m in ("GP-H", "GP-X"):
        if m in methods:
            cfg = OptimizerConfig(mode=m, window=window, grad_tol=tol, max_iters=max_iters)
            out[m] = minimize(relaxed_rosenbrock, x0, cfg)
    return out


# ---------------------------------------------------------------------------
# contour reconstruction from gradients


@dataclass
class ContourResult:
    axis: np.ndarray  # grid coordinates along x1 and x2
    true: np.ndarray  # len(axis) x len(axis), rows indexed by x2
    inferred: np.ndarray
    report: SolverReport

    @property
    def argmin(self) -> np.ndarray:
        j, i = np.unravel_index(np.argmin(self.inferred), self.inferred.shape)
        return np.array([self.axis[i], self.axis[j]])


def slice_points(axis: np.ndarray, D: int) -> np.ndarray:
    """D x G^2 query points on the (x1, x2) plane, other coordinates zero."""
    xx, yy = np.meshgrid(axis, axis)
    Q = np.zeros((D, xx.size))
    Q[0], Q[1] = xx.ravel(), yy.ravel()
    return Q


def run_contour(D: int = 100, N: int = 200, seed: int = 0, grid: int = 41,
                lam: float = 1e-3, tol: float = 1e-6, spec: KernelSpec | None = None,
                max_iterations: int | None = None) -> ContourResult:
    """Condition on N gradients of the relaxed Rosenbrock function at points
    uniform in [-2, 2]^D and reconstruct f on a 2-D slice through the origin."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, size=(D, N))
    G = np.column_stack([relaxed_rosenbrock(x)[1] for x in X.T])
    spec = spec or make_kernel("squared_exponential", "stationary", lam)
    gram = build_gram(GradientDataset(X, G), spec)
    sol = solve_cg(gram, G, SolverConfig(rel_tolerance=tol, max_iterations=max_iterations))
    axis = np.linspace(-2.0, 2.0, grid)
    Q = slice_points(axis, D)
    inferred = infer_function(Q, gram, sol.Z).reshape(grid, grid)
    true = np.array([relaxed_rosenbrock(q)[0] for q in Q.T]).reshape(grid, grid)
    return ContourResult(axis, true, inferred, sol.report)


# ---------------------------------------------------------------------------
# scaling benchmark


@dataclass
class BenchResult:
    dims: list
    times: list  # median wall seconds per dimension
    reports: list

    @property
    def ratios(self) -> list:
        return [b / a for a, b in zip(self.times, self.times[1:])]


def run_bench(dims=(1000, 2000, 4000, 8000), N: int = 5, reps: int = 5,
              seed: int = 0) -> BenchResult:
    """Median wall time of building the structured Gram and solving it exactly
    with the Woodbury path, at fixed N."""
    rng = np.random.default_rng(seed)
    times, reports = [], []
    for D in dims:
        X = rng.standard_normal((D, N))
        G = rng.standard_normal((D, N))
        spec = make_kernel("squared_exponential", "stationary", 1.0 / D)
        data = GradientDataset(X, G)
        samples = []
        for _ in range(reps):
            t0 = time.perf_counter()
            sol = solve_woodbury(build_gram(data, spec), G)
            samples.append(time.perf_counter() - t0)
        times.append(float(np.median(samples)))
        reports.append(sol.report)
    return BenchResult(list(dims), times, reports)


# ---------------------------------------------------------------------------
# sampling


def run_hmc(D: int = 100, seeds=(0,), samples: int = 2000, rotated: bool = False,
            eps: float | None = None) -> list[GpgRun]:
    out = []
    for s in seeds:
        kw = {"samples": samples}
        if eps is not None:
            kw["eps"] = eps
        cfg = HmcConfig.for_dim(D, rotated=rotated, **kw)
        out.append(run_banana(D, s, samples, rotated, cfg))
    return out
