"""Test problems and classical baselines.

* SPD matrices with a prescribed, clustered spectrum and the quadratic
  objective ``f(x) = 1/2 (x - x*)^T A (x - x*)``.
* The relaxed Rosenbrock function ``sum_i x_i^2 + 2 (x_{i+1} - x_i^2)^2``.
* Textbook conjugate gradients and BFGS sharing the optimiser's line search.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import LineSearchError, NumericalBreakdown
from .optim import LineSearchConfig, OptTrace, line_search


def gen_spectrum(D: int, lam_min: float = 0.5, lam_max: float = 100.0, rho: float = 0.6,
                 convention: str = "endpoint-matched") -> np.ndarray:
    """Eigenvalues ``lam_min + (lam_max - lam_min)/(D-1) * rho^e * (D-i)``.

    ``as-printed`` uses ``e = D - i``, which never reaches lam_max;
    ``endpoint-matched`` uses ``e = i - 1`` so that ``lam_1 = lam_max`` and
    ``lam_D = lam_min``.
    """
    if not (lam_max > lam_min > 0):
        raise ValueError("need lam_max > lam_min > 0")
    if not 0 < rho < 1:
        raise ValueError("need 0 < rho < 1")
    if D < 2:
        raise ValueError("need D >= 2")
    i = np.arange(1, D + 1)
    if convention == "as-printed":
        e = D - i
    elif convention == "endpoint-matched":
        e = i - 1
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return lam_min + (lam_max - lam_min) / (D - 1) * rho**e * (D - i)


def random_orthonormal(D: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal matrix from the QR factorisation of a Gaussian matrix,
    with the signs fixed so that R has a positive diagonal."""
    Q, R = np.linalg.qr(rng.standard_normal((D, D)))
    return Q * np.sign(np.diag(R))[None, :]


@dataclass
class QuadraticProblem:
    A: np.ndarray
    x_star: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.x_star = np.asarray(self.x_star, dtype=float)
        if not np.allclose(self.A, self.A.T, rtol=0, atol=1e-12 * np.abs(self.A).max()):
            raise ValueError("A must be symmetric")

    @property
    def b(self) -> np.ndarray:
        return self.A @ self.x_star

    @property
    def D(self) -> int:
        return self.A.shape[0]

    def __call__(self, x):
        r = np.asarray(x, dtype=float) - self.x_star
        g = self.A @ r
        return 0.5 * float(r @ g), g

    def hess_apply(self, v):
        return self.A @ v

    @classmethod
    def from_spectrum(cls, D: int, rng: np.random.Generator,
                      convention: str = "endpoint-matched", **kw) -> "QuadraticProblem":
        lam = gen_spectrum(D, convention=convention, **kw)
        Q = random_orthonormal(D, rng)
        A = Q.T @ (lam[:, None] * Q)
        A = 0.5 * (A + A.T)
        return cls(A, sample_solution(D, rng))


def sample_start(D: int, rng: np.random.Generator) -> np.ndarray:
    """``x0 ~ N(0, 5^2 I)``."""
    return 5.0 * rng.standard_normal(D)


def sample_solution(D: int, rng: np.random.Generator) -> np.ndarray:
    """``x* ~ N(-2 * 1, I)``."""
    return -2.0 + rng.standard_normal(D)


def relaxed_rosenbrock(x) -> tuple[float, np.ndarray]:
    """Value and gradient of ``sum_{i<D} x_i^2 + 2 (x_{i+1} - x_i^2)^2``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("need D >= 2")
    head, tail = x[:-1], x[1:]
    u = tail - head**2
    f = float(np.sum(head**2) + 2.0 * np.sum(u**2))
    g = np.zeros_like(x)
    g[:-1] += 2.0 * head - 8.0 * u * head
    g[1:] += 4.0 * u
    return f, g


# ---------------------------------------------------------------------------
# baselines


@dataclass
class CGTrace:
    residuals: list = field(default_factory=list)  # relative residual norms, r_0 first
    x: np.ndarray | None = None
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.residuals) - 1


def cg_baseline(A_apply, b, x0, tol: float = 1e-5, max_iters: int | None = None) -> CGTrace:
    """Classical conjugate gradients for ``A x = b``; the trace holds
    ``||b - A x_k|| / ||b - A x_0||`` (the relative gradient norm of the
    quadratic objective)."""
    x = np.array(x0, dtype=float)
    b = np.asarray(b, dtype=float)
    max_iters = max_iters or 10 * x.shape[0]
    r = b - A_apply(x)
    r0 = float(np.linalg.norm(r))
    trace = CGTrace([1.0])
    if r0 == 0:
        trace.x, trace.converged = x, True
        return trace
    p = r.copy()
    rr = float(r @ r)
    for k in range(max_iters):
        Ap = A_apply(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp) or pAp <= 0:
            raise NumericalBreakdown(f"p'Ap = {pAp:g}: matrix is not positive definite", k)
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(r @ r)
        trace.residuals.append(np.sqrt(rr_new) / r0)
        if trace.residuals[-1] <= tol:
            trace.converged = True
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    trace.x = x
    return trace


def bfgs_baseline(problem, x0, ls: LineSearchConfig | None = None, grad_tol: float = 1e-5,
                  max_iters: int = 1000) -> OptTrace:
    """Dense inverse-Hessian BFGS with the shared strong-Wolfe line search.

    The update is skipped when the curvature pair fails ``s'y > 1e-10 |s||y|``.
    """
    t0 = time.perf_counter()
    ls = ls or LineSearchConfig()
    x = np.asarray(x0, dtype=float).copy()
    D = x.shape[0]
    f, g = problem(x)
    g0n = float(np.linalg.norm(g))
    trace = OptTrace(method="BFGS", evaluations=1)
    trace.add(0, f, g0n, 0.0, False, 0.0)
    Hinv = np.eye(D)
    it = 0
    while g0n > 0 and np.linalg.norm(g) > grad_tol * g0n and it < max_iters:
        it += 1
        d = -Hinv @ g
        if d @ g >= 0:
            Hinv = np.eye(D)
            d = -g
        cache = {}

        def phi(a):
            fa, ga = problem(x + a * d)
            cache[a] = (fa, ga)
            return float(fa), float(ga @ d)

        try:
            res = line_search(phi, 1.0, ls, phi0=(f, float(g @ d)))
        except LineSearchError:
            trace.message = f"line search failed at iteration {it}"
            break
        trace.evaluations += res.evaluations
        if res.alpha == 0.0:
            trace.message = f"no progress at iteration {it}"
            break
        f_new, g_new = cache[res.alpha]
        s = res.alpha * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if it == 1:
                Hinv = (sy / float(y @ y)) * np.eye(D)
            rho = 1.0 / sy
            Hy = Hinv @ y
            Hinv = (Hinv - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                    + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s))
        x = x + s
        f, g = f_new, g_new
        trace.add(it, f, np.linalg.norm(g), res.alpha, False, 1e3 * (time.perf_counter() - t0))
    trace.x = x
    trace.converged = bool(np.linalg.norm(g) <= grad_tol * g0n)
    trace.message = trace.message or ("converged" if trace.converged else "iteration limit reached")
    return trace
