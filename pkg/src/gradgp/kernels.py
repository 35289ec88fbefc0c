"""Scalar kernel families k(r), their r-derivatives, and the two metric forms.

A kernel is written as a scalar function of one scalar argument r. For
dot-product kernels ``r = (x_a - c)^T L (x_b - c)`` and for stationary
kernels ``r = (x_a - x_b)^T L (x_a - x_b)`` (a *squared* scaled distance),
where L is a symmetric positive definite scaling matrix (`Lengthscale`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg

from .errors import KernelDomainError, SingularityError

#: Below this value of r the stationary families switch to their r -> 0 limits.
ORIGIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Lengthscale:
    """The scaling matrix of the metric in one of three storage forms.

    Use the constructors :meth:`isotropic`, :meth:`diagonal` and
    :meth:`dense` rather than building instances directly.
    """

    kind: str
    value: object
    _chol: object = field(default=None, repr=False)

    @classmethod
    def isotropic(cls, lam: float) -> "Lengthscale":
        lam = float(lam)
        if not lam > 0 or not math.isfinite(lam):
            raise ValueError(f"isotropic lengthscale must be positive, got {lam}")
        return cls("isotropic", lam)

    @classmethod
    def diagonal(cls, entries) -> "Lengthscale":
        d = np.array(entries, dtype=float).ravel()
        if d.size == 0 or not np.all(d > 0) or not np.all(np.isfinite(d)):
            raise ValueError("diagonal lengthscale entries must be positive")
        d.setflags(write=False)
        return cls("diagonal", d)

    @classmethod
    def dense(cls, matrix) -> "Lengthscale":
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("dense lengthscale must be a square matrix")
        if not np.allclose(m, m.T, rtol=0, atol=1e-12 * np.abs(m).max()):
            raise ValueError("dense lengthscale must be symmetric")
        m = 0.5 * (m + m.T)
        try:
            chol = scipy.linalg.cho_factor(m, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("dense lengthscale must be positive definite") from exc
        m.setflags(write=False)
        return cls("dense", m, chol)

    @classmethod
    def coerce(cls, lam) -> "Lengthscale":
        """Build from a scalar, a vector (diagonal) or a matrix (dense)."""
        if isinstance(lam, Lengthscale):
            return lam
        arr = np.asarray(lam, dtype=float)
        if arr.ndim == 0:
            return cls.isotropic(float(arr))
        if arr.ndim == 1:
            return cls.diagonal(arr)
        return cls.dense(arr)

    @property
    def dim(self) -> int | None:
        if self.kind == "isotropic":
            return None
        return int(np.shape(self.value)[0])

    def check_dim(self, D: int) -> None:
        if self.dim is not None and self.dim != D:
            raise ValueError(f"lengthscale has dimension {self.dim}, data has {D}")

    def apply(self, V: np.ndarray) -> np.ndarray:
        """Return ``L @ V`` for a vector or a D x N matrix."""
        V = np.asarray(V, dtype=float)
        if self.kind == "isotropic":
            return self.value * V
        self.check_dim(V.shape[0])
        if self.kind == "diagonal":
            return self.value[:, None] * V if V.ndim == 2 else self.value * V
        return self.value @ V

    def solve(self, V: np.ndarray) -> np.ndarray:
        """Return ``L^{-1} @ V``."""
        V = np.asarray(V, dtype=float)
        if self.kind == "isotropic":
            return V / self.value
        self.check_dim(V.shape[0])
        if self.kind == "diagonal":
            return V / self.value[:, None] if V.ndim == 2 else V / self.value
        return scipy.linalg.cho_solve(self._chol, V)

    def matrix(self, D: int) -> np.ndarray:
        self.check_dim(D)
        if self.kind == "isotropic":
            return self.value * np.eye(D)
        if self.kind == "diagonal":
            return np.diag(self.value)
        return np.array(self.value)

    def diag(self, D: int) -> np.ndarray:
        """Diagonal entries; only defined for isotropic and diagonal forms."""
        self.check_dim(D)
        if self.kind == "isotropic":
            return np.full(D, self.value)
        if self.kind == "diagonal":
            return np.array(self.value)
        raise ValueError("diag() needs an isotropic or diagonal lengthscale")

    def scaled(self, factor: float) -> "Lengthscale":
        if self.kind == "isotropic":
            return Lengthscale.isotropic(self.value * factor)
        if self.kind == "diagonal":
            return Lengthscale.diagonal(self.value * factor)
        return Lengthscale.dense(self.value * factor)


@dataclass(frozen=True, eq=False)
class DotProduct:
    lam: Lengthscale
    offset: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "lam", Lengthscale.coerce(self.lam))
        if self.offset is not None:
            c = np.array(self.offset, dtype=float).ravel()
            c.setflags(write=False)
            object.__setattr__(self, "offset", c)

    def centre(self, X: np.ndarray) -> np.ndarray:
        """Subtract the offset from a vector or from each column of X."""
        X = np.asarray(X, dtype=float)
        if self.offset is None:
            return X.copy()
        if self.offset.shape[0] != X.shape[0]:
            raise ValueError(
                f"offset has dimension {self.offset.shape[0]}, data has {X.shape[0]}")
        return X - (self.offset[:, None] if X.ndim == 2 else self.offset)


@dataclass(frozen=True, eq=False)
class Stationary:
    lam: Lengthscale

    def __post_init__(self):
        object.__setattr__(self, "lam", Lengthscale.coerce(self.lam))


Metric = DotProduct | Stationary


def eval_r(metric: Metric, x_a, x_b) -> float:
    """Scalar argument r(x_a, x_b) of the kernel for the given metric."""
    x_a = np.asarray(x_a, dtype=float).ravel()
    x_b = np.asarray(x_b, dtype=float).ravel()
    if x_a.shape != x_b.shape:
        raise ValueError(f"dimension mismatch: {x_a.shape[0]} vs {x_b.shape[0]}")
    metric.lam.check_dim(x_a.shape[0])
    if isinstance(metric, DotProduct):
        return float(metric.centre(x_a) @ metric.lam.apply(metric.centre(x_b)))
    d = x_a - x_b
    return max(float(d @ metric.lam.apply(d)), 0.0)


def r_matrix(metric: Metric, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise r between the columns of A (D x P) and B (D x Q)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape[0]} vs {B.shape[0]}")
    if isinstance(metric, DotProduct):
        return metric.centre(A).T @ metric.lam.apply(metric.centre(B))
    # shift both sets by a common centre to limit cancellation
    mid = B.mean(axis=1, keepdims=True)
    A = A - mid
    B = B - mid
    LB = metric.lam.apply(B)
    sa = np.einsum("ip,ip->p", A, metric.lam.apply(A))
    sb = np.einsum("iq,iq->q", B, LB)
    return np.maximum(sa[:, None] + sb[None, :] - 2.0 * (A.T @ LB), 0.0)


# ---------------------------------------------------------------------------
# kernel families
#
# Each family implements ``_derivs(r, order)`` returning a list of arrays
# [k, k', ..., k^(order)].  Entries that diverge at the origin are NaN; the
# public entry point converts them into SingularityError.


class _Family:
    name = ""
    stationary = False
    #: highest derivative order with a finite value at r = 0 (stationary only)
    origin_order = 3

    def _derivs(self, r: np.ndarray, order: int) -> list[np.ndarray]:
        raise NotImplementedError

    def to_config(self) -> dict:
        return {"family": self.name}


class Polynomial(_Family):
    """``k(r) = r^p / (p (p - 1))``."""

    name = "polynomial"

    def __init__(self, p: int = 2):
        if int(p) != p or p < 2:
            raise ValueError(f"polynomial degree must be an integer >= 2, got {p}")
        self.p = int(p)

    def __repr__(self):
        return f"Polynomial({self.p})"

    def _derivs(self, r, order):
        p = self.p
        out = [r**p / (p * (p - 1)), r ** (p - 1) / (p - 1), r ** (p - 2)]
        out.append(np.zeros_like(r) if p == 2 else (p - 2) * r ** (p - 3))
        return out[: order + 1]

    def to_config(self):
        return {"family": self.name, "p": str(self.p)}


class Exponential(_Family):
    """``k(r) = exp(r)``; every derivative equals k."""

    name = "exponential"

    def __repr__(self):
        return "Exponential()"

    def _derivs(self, r, order):
        e = np.exp(r)
        return [e] * (order + 1)


class SquaredExponential(_Family):
    """``k(r) = exp(-r/2)``."""

    name = "squared_exponential"
    stationary = True

    def __repr__(self):
        return "SquaredExponential()"

    def _derivs(self, r, order):
        e = np.exp(-0.5 * r)
        return [e, -0.5 * e, 0.25 * e, -0.125 * e][: order + 1]


class RationalQuadratic(_Family):
    """``k(r) = (1 + r / (2 alpha))^(-alpha)``."""

    name = "rational_quadratic"
    stationary = True

    def __init__(self, alpha: float = 1.0):
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        self.alpha = float(alpha)

    def __repr__(self):
        return f"RationalQuadratic({self.alpha:g})"

    def _derivs(self, r, order):
        a = self.alpha
        b = 1.0 + r / (2.0 * a)
        out = [
            b**-a,
            -0.5 * b ** (-a - 1),
            (a + 1) / (4 * a) * b ** (-a - 2),
            -(a + 1) * (a + 2) / (8 * a * a) * b ** (-a - 3),
        ]
        return out[: order + 1]

    def to_config(self):
        return {"family": self.name, "alpha": repr(self.alpha)}


class Matern(_Family):
    """Half-integer Matern kernels written in ``s = sqrt(r)``.

    The r-derivatives simplify to short closed forms in s. Matern 1/2 has no
    finite derivative at the origin, Matern 3/2 only a finite first
    derivative, Matern 5/2 finite first and second derivatives.
    """

    name = "matern"
    stationary = True

    def __init__(self, nu=Fraction(5, 2)):
        nu = Fraction(nu).limit_denominator(4)
        if nu not in (Fraction(1, 2), Fraction(3, 2), Fraction(5, 2)):
            raise ValueError(f"nu must be one of 1/2, 3/2, 5/2, got {nu}")
        self.nu = nu
        self.origin_order = {Fraction(1, 2): 0, Fraction(3, 2): 1, Fraction(5, 2): 2}[nu]

    def __repr__(self):
        return f"Matern({self.nu})"

    def _derivs(self, r, order):
        at0 = r < ORIGIN_TOL
        s = np.sqrt(np.where(at0, 1.0, r))
        if self.nu == Fraction(1, 2):
            e = np.exp(-s)
            out = [e, -e / (2 * s), (s + 1) * e / (4 * s**3),
                   -(s * s + 3 * s + 3) * e / (8 * s**5)]
            limits = [1.0]
        elif self.nu == Fraction(3, 2):
            a = math.sqrt(3.0)
            e = np.exp(-a * s)
            out = [(1 + a * s) * e, -1.5 * e, a**3 / (4 * s) * e,
                   -(a**3 / 8) * (1 + a * s) * e / s**3]
            limits = [1.0, -1.5]
        else:
            a = math.sqrt(5.0)
            e = np.exp(-a * s)
            out = [(1 + a * s + a * a * s * s / 3) * e, -(a * a / 6) * (1 + a * s) * e,
                   (a**4 / 12) * e, -(a**5 / 24) * e / s]
            limits = [1.0, -5.0 / 6.0, 25.0 / 12.0]
        out = out[: order + 1]
        # k itself has no 0/0 form, so evaluate it exactly even below the
        # switch threshold (finite differences of k probe tiny r).
        out[0] = self._value(np.sqrt(np.maximum(r, 0)))
        if np.any(at0):
            for n in range(1, len(out)):
                out[n] = np.where(at0, limits[n] if n < len(limits) else np.nan, out[n])
        return out

    def _value(self, s):
        if self.nu == Fraction(1, 2):
            return np.exp(-s)
        if self.nu == Fraction(3, 2):
            a = math.sqrt(3.0)
            return (1 + a * s) * np.exp(-a * s)
        a = math.sqrt(5.0)
        return (1 + a * s + a * a * s * s / 3) * np.exp(-a * s)

    def to_config(self):
        return {"family": self.name, "nu": str(self.nu)}


FAMILIES = {
    "polynomial": Polynomial,
    "exponential": Exponential,
    "squared_exponential": SquaredExponential,
    "se": SquaredExponential,
    "rbf": SquaredExponential,
    "matern": Matern,
    "rational_quadratic": RationalQuadratic,
    "rq": RationalQuadratic,
}


@dataclass(frozen=True, eq=False)
class KernelSpec:
    family: _Family
    metric: Metric

    def __post_init__(self):
        if self.family.stationary != isinstance(self.metric, Stationary):
            want = "stationary" if self.family.stationary else "dot-product"
            raise ValueError(f"{self.family!r} requires a {want} metric")

    @property
    def stationary(self) -> bool:
        return self.family.stationary

    @property
    def lam(self) -> Lengthscale:
        return self.metric.lam

    @property
    def differentiable(self) -> bool:
        """Whether gradient observations are supported (k' finite at r = 0)."""
        return not self.stationary or self.family.origin_order >= 1

    def derivs(self, r, order: int = 3) -> list[np.ndarray]:
        """Vectorised r-derivatives; divergent entries come back as NaN."""
        r = np.asarray(r, dtype=float)
        if self.stationary and np.any(r < 0):
            raise KernelDomainError(f"stationary kernel evaluated at r = {r.min():g} < 0")
        return self.family._derivs(r, order)

    def __call__(self, x_a, x_b) -> float:
        return float(self.derivs(eval_r(self.metric, x_a, x_b), 0)[0])

    def to_config(self) -> dict:
        cfg = self.family.to_config()
        cfg["metric"] = "stationary" if self.stationary else "dot"
        lam = self.lam
        if lam.kind == "isotropic":
            cfg["lengthscale"] = repr(lam.value)
        elif lam.kind == "diagonal":
            cfg["lengthscale"] = ",".join(repr(float(v)) for v in lam.value)
        else:
            raise ValueError("dense lengthscales cannot be written to a config section")
        if isinstance(self.metric, DotProduct) and self.metric.offset is not None:
            cfg["offset"] = ",".join(repr(float(v)) for v in self.metric.offset)
        return cfg


def eval_k_derivs(spec: KernelSpec, r: float, order: int = 3) -> tuple[float, ...]:
    """Return ``(k, k', ..., k^(order))`` at scalar r.

    Raises SingularityError when any requested derivative diverges at r.
    """
    vals = spec.derivs(np.array(float(r)), order)
    if any(np.isnan(v) for v in vals):
        raise SingularityError(f"{spec.family!r}: derivative of order <= {order} "
                               f"diverges at r = {r:g}")
    return tuple(float(v) for v in vals)


def make_kernel(family: str, metric: str = "stationary", lengthscale=1.0,
                offset=None, **params) -> KernelSpec:
    """Convenience constructor, e.g. ``make_kernel("matern", nu="5/2")``."""
    try:
        fam = FAMILIES[family.lower()](**params)
    except KeyError:
        raise ValueError(f"unknown kernel family {family!r}") from None
    lam = Lengthscale.coerce(lengthscale)
    if metric.lower() in ("dot", "dot-product", "dotproduct", "dot_product"):
        return KernelSpec(fam, DotProduct(lam, offset))
    if offset is not None:
        raise ValueError("stationary kernels take no offset")
    return KernelSpec(fam, Stationary(lam))


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def kernel_from_config(cfg: dict) -> KernelSpec:
    """Build a KernelSpec from the key/value pairs of a config section."""
    cfg = {k.strip().lower(): str(v).strip() for k, v in cfg.items()}
    family = cfg.get("family", "squared_exponential").lower()
    params = {}
    if "p" in cfg:
        params["p"] = int(cfg["p"])
    if "nu" in cfg:
        params["nu"] = Fraction(cfg["nu"])
    if "alpha" in cfg:
        params["alpha"] = float(cfg["alpha"])
    fam_cls = FAMILIES.get(family)
    if fam_cls is None:
        raise ValueError(f"unknown kernel family {family!r}")
    default_metric = "stationary" if fam_cls.stationary else "dot"
    lam = _floats(cfg.get("lengthscale", "1.0"))
    lam = lam[0] if len(lam) == 1 else lam
    offset = _floats(cfg["offset"]) if "offset" in cfg else None
    return make_kernel(family, cfg.get("metric", default_metric), lam, offset, **params)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().lower().replace("-", "_")] = value.strip()
    return out


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())
