"""Implicit Kronecker-plus-low-rank representation of the gradient Gram matrix.

For N gradient observations in D dimensions the DN x DN matrix of kernel
cross-derivatives is never formed. Block (a, b) equals

    K'_eff[a, b] * L + K''_eff[a, b] * u_ab v_ab^T

with L the lengthscale matrix and, for dot-product kernels,
``u_ab = L (x_b - c)``, ``v_ab = L (x_a - c)``; for stationary kernels
``u_ab = v_ab = L (x_a - x_b)``. The effective coefficients absorb the metric
specific factors: dot-product ``K'_eff = k'``, ``K''_eff = k''``; stationary
``K'_eff = -2 k'``, ``K''_eff = -4 k''``.

Vectorisation is column-major throughout: ``vec(V)`` stacks the columns of a
D x N matrix, so observation a occupies rows ``a*D .. a*D + D - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DuplicatePointError, SingularCError, SingularityError
from .kernels import DotProduct, KernelSpec, r_matrix

DUPLICATE_TOL = 1e-12
DENSE_CAP = 4096


@dataclass
class GradientDataset:
    """Evaluation points X (D x N), gradients G (D x N), optional prior-mean
    gradient ``g_c`` (D,)."""

    X: np.ndarray
    G: np.ndarray
    g_c: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if self.X.shape != self.G.shape:
            raise ValueError(f"X has shape {self.X.shape}, G has shape {self.G.shape}")
        if self.X.shape[1] < 1:
            raise ValueError("dataset needs at least one observation")
        if self.g_c is not None:
            self.g_c = np.asarray(self.g_c, dtype=float).ravel()
            if self.g_c.shape[0] != self.X.shape[0]:
                raise ValueError("prior-mean gradient has wrong dimension")

    @property
    def D(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    def rhs(self) -> np.ndarray:
        """Right-hand side of the Gram system: G minus the prior-mean gradient."""
        if self.g_c is None:
            return self.G
        return self.G - self.g_c[:, None]


@dataclass(frozen=True, eq=False)
class StructuredGram:
    """O(N^2 + ND) storage of the gradient Gram matrix.

    ``Xt`` is ``X - c`` for dot-product kernels. For stationary kernels it is
    X shifted by the column mean ``centre`` (r only depends on differences, and
    the shift keeps the rank-one terms well conditioned).
    """

    spec: KernelSpec
    Kp: np.ndarray
    Kpp: np.ndarray
    Xt: np.ndarray
    LXt: np.ndarray
    centre: np.ndarray | None = None

    @property
    def D(self) -> int:
        return self.Xt.shape[0]

    @property
    def N(self) -> int:
        return self.Xt.shape[1]

    @property
    def stationary(self) -> bool:
        return self.spec.stationary

    @property
    def lam(self):
        return self.spec.lam

    @property
    def X(self) -> np.ndarray:
        """The original evaluation points."""
        if self.stationary:
            return self.Xt + self.centre[:, None]
        c = self.spec.metric.offset
        return self.Xt if c is None else self.Xt + c[:, None]

    @property
    def storage(self) -> int:
        """Number of floats held (excluding the lengthscale)."""
        return self.Kp.size + self.Kpp.size + self.Xt.size + self.LXt.size


def _check_duplicates(R_dist: np.ndarray) -> None:
    N = R_dist.shape[0]
    iu = np.triu_indices(N, 1)
    close = R_dist[iu] < DUPLICATE_TOL
    if np.any(close):
        k = int(np.flatnonzero(close)[0])
        raise DuplicatePointError(int(iu[0][k]), int(iu[1][k]))


def build_gram(dataset: GradientDataset | np.ndarray, spec: KernelSpec) -> StructuredGram:
    """Fill the effective coefficient matrices for the points in ``dataset``.

    Accepts a GradientDataset or just the D x N matrix of points.
    """
    X = dataset.X if isinstance(dataset, GradientDataset) else np.atleast_2d(
        np.asarray(dataset, dtype=float))
    if not spec.differentiable:
        raise SingularityError(f"{spec.family!r} has no derivative at r = 0; "
                               "gradient observations are not supported")
    spec.lam.check_dim(X.shape[0])
    N = X.shape[1]
    if isinstance(spec.metric, DotProduct):
        Xt = spec.metric.centre(X)
        LXt = spec.lam.apply(Xt)
        R = Xt.T @ LXt
        R = 0.5 * (R + R.T)
        if N > 1:
            sq = np.diag(R)
            _check_duplicates(np.maximum(sq[:, None] + sq[None, :] - 2 * R, 0.0))
        _, k1, k2 = spec.derivs(R, 2)
        if np.any(np.isnan(k1)) or np.any(np.isnan(k2)):
            raise SingularityError(f"{spec.family!r}: non-finite derivative in Gram")
        return StructuredGram(spec, k1, k2, Xt, LXt)

    centre = X.mean(axis=1)
    Xt = X - centre[:, None]
    LXt = spec.lam.apply(Xt)
    R = r_matrix(spec.metric, Xt, Xt)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 0.0)
    if N > 1:
        _check_duplicates(R)
    _, k1, k2 = spec.derivs(R, 2)
    Kp = -2.0 * k1
    # The diagonal of K''_eff multiplies x_a - x_a = 0 and never reaches the
    # Gram matrix. Where k'' diverges at r = 0 a placeholder keeps C invertible.
    Kpp = np.where(np.isnan(k2), -1.0, -4.0 * k2)
    return StructuredGram(spec, Kp, Kpp, Xt, LXt, centre)


# ---------------------------------------------------------------------------
# N x N operator contracts (never materialising N^2 x N^2 matrices)


def apply_C(Kpp: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``C vec(M) -> K'' * M^T`` (Hadamard product with the transpose)."""
    return Kpp * M.T


def apply_C_inverse(Kpp: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``C^{-1} vec(M) -> M^T / K''``."""
    if np.any(Kpp == 0):
        raise SingularCError("K'' has a zero entry, C is singular; use the CG path")
    return M.T / Kpp


def apply_Lt(M: np.ndarray) -> np.ndarray:
    """Difference contract: ``out[a, b] = M[b, b] - M[a, b]``."""
    return np.diag(M)[None, :] - M


def apply_L(M: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`apply_Lt`: ``diag(column sums of M) - M``."""
    return np.diag(M.sum(axis=0)) - M


def _rank_term(gram: StructuredGram, P: np.ndarray) -> np.ndarray:
    """N x N coefficient matrix W of the rank-N^2 term, given P = Xt^T L V.

    The rank correction is ``L Xt W`` (after the stationary L contract)."""
    if not gram.stationary:
        return apply_C(gram.Kpp, P)
    # With U = (I kron L X) L the rank term is -U C(K''_eff) U^T, so the
    # stationary path carries C built from -K''_eff.
    return apply_L(apply_C(-gram.Kpp, apply_Lt(P)))


def mvm(gram: StructuredGram, V: np.ndarray) -> np.ndarray:
    """Un-vectorised product ``(grad K grad') vec(V)`` for V of shape D x N."""
    V = np.asarray(V, dtype=float)
    if V.shape != (gram.D, gram.N):
        raise ValueError(f"V has shape {V.shape}, expected {(gram.D, gram.N)}")
    LV = gram.lam.apply(V)
    P = gram.Xt.T @ LV
    return LV @ gram.Kp + gram.LXt @ _rank_term(gram, P)


def materialize_dense(gram: StructuredGram, cap: int = DENSE_CAP) -> np.ndarray:
    """Assemble the full DN x DN Gram matrix block by block (test oracle)."""
    D, N = gram.D, gram.N
    if D * N > cap:
        raise MemoryError(f"D*N = {D * N} exceeds the dense cap of {cap}")
    Lam = gram.lam.matrix(D)
    out = np.empty((D * N, D * N))
    for a in range(N):
        for b in range(N):
            if gram.stationary:
                u = Lam @ (gram.Xt[:, a] - gram.Xt[:, b])
                v = u
            else:
                u = Lam @ gram.Xt[:, b]
                v = Lam @ gram.Xt[:, a]
            out[a * D:(a + 1) * D, b * D:(b + 1) * D] = (
                gram.Kp[a, b] * Lam + gram.Kpp[a, b] * np.outer(u, v))
    return out


def vec(M: np.ndarray) -> np.ndarray:
    return np.asarray(M).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int) -> np.ndarray:
    return np.asarray(v).reshape(rows, -1, order="F")
