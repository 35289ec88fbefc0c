"""Hamiltonian Monte Carlo with an optional Gaussian-process gradient surrogate.

The surrogate replaces the potential gradient inside the leapfrog integrator
only. The Metropolis correction always evaluates the true potential energy,
so the chain targets the correct distribution however poor the surrogate is.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, GradGPError
from .gram import GradientDataset
from .kernels import KernelSpec, make_kernel
from .posterior import infer_gradient
from .problems import random_orthonormal
from .solvers import SolverConfig, solve


@dataclass
class HmcConfig:
    eps: float
    T: int
    mass: float = 1.0
    samples: int = 2000
    burn_in: int = 0
    budget: int = 2
    sq_lengthscale: float = 1.0
    stall_factor: int = 100  # phase-1 iterations allowed per budget point

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.budget < 2:
            raise ValueError("surrogate budget must be >= 2")
        if not self.sq_lengthscale > 0:
            raise ValueError("squared lengthscale must be positive")

    @classmethod
    def for_dim(cls, D: int, rotated: bool = False, **kw) -> "HmcConfig":
        """Defaults for dimension D: ``eps = 4e-3 / ceil(D^(1/4))``,
        ``T = 32 ceil(D^(1/4))``, burn-in D, budget ``floor(sqrt(D))`` and
        squared lengthscale 0.4 D (0.25 D with halved eps when rotated)."""
        q = math.ceil(D ** 0.25 - 1e-12)
        eps = 4e-3 / q
        opts = dict(eps=eps / 2 if rotated else eps, T=32 * q, burn_in=D,
                    budget=max(2, math.isqrt(D)),
                    sq_lengthscale=(0.25 if rotated else 0.4) * D)
        opts.update(kw)
        return cls(**opts)

    @property
    def separation(self) -> float:
        return math.sqrt(self.sq_lengthscale)


# ---------------------------------------------------------------------------
# target


@dataclass
class BananaTarget:
    """``E(x) = 1/2 (x1^2 + (a0 x1^2 + a1 x2 + a2)^2 + sum_{i>=3} a_i x_i^2)``,
    evaluated at ``R x`` when a rotation R is attached."""

    D: int
    a: np.ndarray | None = None
    rotation: np.ndarray | None = None

    def __post_init__(self):
        if self.D < 3:
            raise ValueError("banana target needs D >= 3")
        if self.a is None:
            self.a = np.full(self.D + 1, 2.0)
            self.a[1] = -2.0
        self.a = np.asarray(self.a, dtype=float)
        if self.a.shape != (self.D + 1,):
            raise ValueError(f"a must have {self.D + 1} entries")
        if self.rotation is not None:
            self.rotation = np.asarray(self.rotation, dtype=float)

    @classmethod
    def rotated(cls, D: int, rng: np.random.Generator) -> "BananaTarget":
        return cls(D, rotation=random_orthonormal(D, rng))

    def to_aligned(self, x: np.ndarray) -> np.ndarray:
        return x if self.rotation is None else self.rotation @ x

    def __call__(self, x):
        return banana_eval(self, x)


def banana_eval(t: BananaTarget, x) -> tuple[float, np.ndarray]:
    """Potential energy and its gradient."""
    y = t.to_aligned(np.asarray(x, dtype=float))
    a = t.a
    # far-out states overflow to inf, which the integrator treats as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        u = a[0] * y[0] ** 2 + a[1] * y[1] + a[2]
        rest = a[3:] * y[2:]
        E = 0.5 * (y[0] ** 2 + u * u + float(rest @ y[2:]))
        g = np.empty_like(y)
        g[0] = y[0] + 2.0 * a[0] * y[0] * u
        g[1] = a[1] * u
        g[2:] = rest
    if t.rotation is not None:
        g = t.rotation.T @ g
    return float(E), g


# ---------------------------------------------------------------------------
# integrator and chain


def leapfrog(x, p, grad, T: int, eps: float, mass: float = 1.0):
    """T kick-drift-kick steps; ``grad(x)`` is the potential gradient."""
    x = np.array(x, dtype=float)
    p = np.array(p, dtype=float)
    p -= 0.5 * eps * grad(x)
    for t in range(T):
        x += (eps / mass) * p
        gx = grad(x)
        p -= (eps if t < T - 1 else 0.5 * eps) * gx
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise DivergenceError(f"non-finite state after leapfrog step {t + 1}")
    return x, p


@dataclass
class ChainResult:
    samples: np.ndarray  # S x D
    accepted: np.ndarray  # S booleans
    dH: np.ndarray  # S energy errors
    grad_calls: int = 0  # calls of the integrator gradient, true or surrogate
    energy_calls: int = 0
    divergences: int = 0
    true_grad_calls: int = 0  # filled in by callers that track the true gradient

    @property
    def acceptance(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else float("nan")

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        return self.samples.mean(axis=0), self.samples.var(axis=0, ddof=1)


class _Counted:
    """Wraps a gradient callable and counts its calls."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)


def hmc_chain(energy, grad, cfg: HmcConfig, x0, rng: np.random.Generator) -> ChainResult:
    """Metropolis-corrected HMC with ``cfg.burn_in`` discarded proposals
    followed by ``cfg.samples`` recorded ones.

    ``energy(x)`` is the true potential; ``grad`` drives the integrator and may
    be a surrogate. Divergent trajectories are rejected and counted.
    """
    x = np.array(x0, dtype=float)
    D = x.shape[0]
    E = energy(x)
    n_energy = 1
    grad_c = _Counted(grad)
    out = np.empty((cfg.samples, D))
    acc = np.zeros(cfg.samples, dtype=bool)
    dHs = np.zeros(cfg.samples)
    divergences = 0
    sd = math.sqrt(cfg.mass)
    for it in range(cfg.burn_in + cfg.samples):
        p = sd * rng.standard_normal(D)
        H0 = E + 0.5 * float(p @ p) / cfg.mass
        try:
            xn, pn = leapfrog(x, p, grad_c, cfg.T, cfg.eps, cfg.mass)
            En = energy(xn)
            n_energy += 1
            with np.errstate(over="ignore", invalid="ignore"):
                dH = En + 0.5 * float(pn @ pn) / cfg.mass - H0
            ok = bool(np.isfinite(dH)) and rng.uniform() < math.exp(min(0.0, -dH))
        except DivergenceError:
            divergences += 1
            dH, ok = math.inf, False
        if ok:
            x, E = xn, En
        k = it - cfg.burn_in
        if k >= 0:
            out[k] = x
            acc[k] = ok
            dHs[k] = dH
    return ChainResult(out, acc, dHs, grad_c.calls, n_energy, divergences)


# ---------------------------------------------------------------------------
# surrogate


@dataclass
class GradientSurrogate:
    """Posterior-mean gradient of a GP conditioned on true gradients."""

    spec: KernelSpec
    X: np.ndarray
    G: np.ndarray
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        sol = solve(GradientDataset(self.X, self.G), self.spec, self.solver)
        self.gram, self.Z = sol.gram, sol.Z
        self.report = sol.report

    @property
    def N(self) -> int:
        return self.X.shape[1]

    def __call__(self, x):
        return infer_gradient(x, self.gram, self.Z)


@dataclass
class TrainingLog:
    iterations: int  # HMC proposals consumed by both phases
    phase1_iterations: int
    true_grad_obs: int  # gradient observations in the surrogate
    phase1_grad_calls: int  # leapfrog gradient calls of the plain-HMC phase
    x_last: np.ndarray


def _far_from(x, pts, sep) -> bool:
    return all(np.linalg.norm(x - q) > sep for q in pts)


def train_surrogate(energy, grad, cfg: HmcConfig, rng: np.random.Generator, x0,
                    spec: KernelSpec | None = None) -> tuple[GradientSurrogate, TrainingLog]:
    """Collect ``cfg.budget`` well-separated gradient observations.

    Phase 1 runs plain HMC and keeps visited states more than one lengthscale
    from every kept state until half the budget is reached. Phase 2 proposes
    with the surrogate and queries the true gradient whenever a new state is
    separated from all kept states, refitting after each addition.
    """
    spec = spec or make_kernel("squared_exponential", "stationary", 1.0 / cfg.sq_lengthscale)
    sep = cfg.separation
    step = HmcConfig(cfg.eps, cfg.T, cfg.mass, samples=1, burn_in=0, budget=cfg.budget,
                     sq_lengthscale=cfg.sq_lengthscale)
    x = np.array(x0, dtype=float)
    kept_x, kept_g = [], []
    half = cfg.budget // 2
    limit = cfg.stall_factor * cfg.budget
    it = since = phase1_calls = 0
    model = None
    while len(kept_x) < cfg.budget:
        if len(kept_x) < half:
            res = hmc_chain(energy, grad, step, x, rng)
            phase1_calls += res.grad_calls
        else:
            res = hmc_chain(energy, model, step, x, rng)
        x = res.samples[0]
        it += 1
        since += 1
        if _far_from(x, kept_x, sep):
            kept_x.append(x.copy())
            kept_g.append(np.asarray(grad(x), dtype=float))
            since = 0
            if len(kept_x) >= half:
                model = GradientSurrogate(spec, np.column_stack(kept_x), np.column_stack(kept_g))
            if len(kept_x) == half:
                phase1 = it
        elif since > limit:
            if len(kept_x) < half:
                hint = "use a larger step size or a smaller lengthscale"
                phase = "HMC"
            else:
                # long surrogate trajectories leave the region the true energy accepts
                hint = "use a smaller step size or a smaller lengthscale"
                phase = "surrogate"
            raise GradGPError(f"no separated state in {limit} {phase} iterations; {hint}")
    return model, TrainingLog(it, phase1, len(kept_x), phase1_calls, x)


@dataclass
class GpgRun:
    target: BananaTarget
    plain: ChainResult
    gpg: ChainResult
    log: TrainingLog
    model: GradientSurrogate


def run_banana(D: int, seed: int, samples: int = 2000, rotated: bool = False,
               cfg: HmcConfig | None = None) -> GpgRun:
    """Plain HMC and GPG-HMC on the banana target from a seeded start.

    ``gpg.true_grad_calls`` counts true-gradient evaluations made while the
    surrogate chain samples; it is zero by construction.
    """
    rng = np.random.default_rng(seed)
    target = BananaTarget.rotated(D, rng) if rotated else BananaTarget(D)
    cfg = cfg or HmcConfig.for_dim(D, rotated=rotated, samples=samples)
    x0 = rng.standard_normal(D)
    energy = lambda x: target(x)[0]
    true_grad = _Counted(lambda x: target(x)[1])
    plain = hmc_chain(energy, true_grad, cfg, x0, rng)
    plain.true_grad_calls = true_grad.calls
    model, log = train_surrogate(energy, true_grad, cfg, rng, x0)
    before = true_grad.calls
    gpg = hmc_chain(energy, model, cfg, log.x_last, rng)
    gpg.true_grad_calls = true_grad.calls - before
    return GpgRun(target, plain, gpg, log, model)


def write_samples_csv(path, result: ChainResult, target: BananaTarget | None = None) -> None:
    """``idx,accept,dH,x1,x2`` with coordinates mapped back to the aligned frame."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["idx", "accept", "dH", "x1", "x2"])
        for i, (x, a, dh) in enumerate(zip(result.samples, result.accepted, result.dH)):
            y = target.to_aligned(x) if target is not None else x
            w.writerow([i, int(a), f"{dh:.17g}", f"{y[0]:.17g}", f"{y[1]:.17g}"])
