"""Posterior-mean queries given the representers Z of a gradient dataset.

Every quantity is linear in Z. For a query x_q the cross-covariances with the
observed gradients only need k', k'' (and k''' for the Hessian) evaluated at
r(x_q, x_b), so a query costs O(ND) after the solve.

Query functions accept a single D-vector or a D x Q batch of query points.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import HessianSolveError, SolverError
from .gram import DUPLICATE_TOL, GradientDataset, StructuredGram
from .kernels import KernelSpec, Lengthscale
from .solvers import DEFAULT_LADDER, SolverConfig, solve


def _as_batch(x_q, D: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x_q, dtype=float)
    single = x.ndim == 1
    x = x.reshape(D, -1) if single else x
    if x.shape[0] != D:
        raise ValueError(f"query has dimension {x.shape[0]}, expected {D}")
    return x, single


def _query_terms(gram: StructuredGram, Xq: np.ndarray, Z: np.ndarray, order: int):
    """Shared quantities for a batch of queries.

    Returns (Xqt, R, derivs, M, coincident, LZ): query coordinates in the gram's
    frame, the Q x N matrix of r, [k, k', ...] at R, ``M[q, b]`` the contraction
    of Z_b with dr/dx_b (up to the metric factor), a mask of coincident pairs
    and L Z.
    """
    LZ = gram.lam.apply(Z)
    if not gram.stationary:
        Xqt = gram.spec.metric.centre(Xq)
        R = Xqt.T @ gram.LXt
        M = Xqt.T @ LZ
        return Xqt, R, gram.spec.derivs(R, order), M, np.zeros(R.shape, dtype=bool), LZ
    Xqt = Xq - gram.centre[:, None]
    LXq = gram.lam.apply(Xqt)
    sq_q = np.einsum("iq,iq->q", Xqt, LXq)
    sq_b = np.einsum("ib,ib->b", gram.Xt, gram.LXt)
    R = np.maximum(sq_q[:, None] + sq_b[None, :] - 2.0 * (Xqt.T @ gram.LXt), 0.0)
    coincident = R < DUPLICATE_TOL
    R = np.where(coincident, 0.0, R)
    # m[q, b] = (x_q - x_b)^T L Z_b
    M = Xqt.T @ LZ - np.einsum("ib,ib->b", gram.Xt, LZ)[None, :]
    return Xqt, R, gram.spec.derivs(R, order), M, coincident, LZ


def infer_function(x_q, gram: StructuredGram, Z: np.ndarray, prior_mean: float = 0.0):
    """Posterior mean of f at x_q: ``mu + sum_b k'(r_qb) (dr/dx_b)^T Z_b``."""
    Xq, single = _as_batch(x_q, gram.D)
    _, _, (_, k1), M, _, _ = _query_terms(gram, Xq, Z, 1)
    Kp = -2.0 * k1 if gram.stationary else k1
    out = prior_mean + np.sum(Kp * M, axis=1)
    return float(out[0]) if single else out


def infer_gradient(x_q, gram: StructuredGram, Z: np.ndarray, prior_grad=None):
    """Posterior mean of the gradient at x_q (D-vector, or D x Q for a batch)."""
    Xq, single = _as_batch(x_q, gram.D)
    Xqt, _, (_, k1, k2), M, coinc, LZ = _query_terms(gram, Xq, Z, 2)
    if gram.stationary:
        Kp = -2.0 * k1
        # (x_q - x_b) vanishes at coincident pairs; k'' may be infinite there
        W = np.where(coinc, 0.0, -4.0 * k2 * M)
        out = LZ @ Kp.T + gram.lam.apply(Xqt) * W.sum(axis=1)[None, :] - gram.LXt @ W.T
    else:
        out = LZ @ k1.T + gram.LXt @ (k2 * M).T
    if prior_grad is not None:
        out = out + np.asarray(prior_grad, dtype=float).reshape(-1, 1)
    return out[:, 0] if single else out


@dataclass
class LowRankHessian:
    """``H = diag_scale * L + F W F^T`` with F = [L Xt, L Z] (D x 2N) and
    W = [[M, Mh], [Mh, 0]] built from diagonal N x N blocks."""

    lam: Lengthscale
    diag_scale: float
    F: np.ndarray
    W: np.ndarray

    @property
    def D(self) -> int:
        return self.F.shape[0]

    def dense(self) -> np.ndarray:
        return self.diag_scale * self.lam.matrix(self.D) + self.F @ self.W @ self.F.T

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.diag_scale * self.lam.apply(v) + self.F @ (self.W @ (self.F.T @ v))

    def diag(self) -> np.ndarray:
        return (self.diag_scale * self.lam.diag(self.D)
                + np.einsum("ij,jk,ik->i", self.F, self.W, self.F))


def infer_hessian(x_q, gram: StructuredGram, Z: np.ndarray) -> LowRankHessian:
    """Posterior mean of the Hessian at a single query point."""
    x_q = np.asarray(x_q, dtype=float).ravel()
    if not gram.spec.differentiable:
        raise SolverError(f"{gram.spec.family!r} does not support Hessian inference")
    Xqt, _, (_, _, k2, k3), M, coinc, LZ = _query_terms(gram, x_q[:, None], Z, 3)
    m = M[0]
    if gram.stationary:
        Xtil = Xqt - gram.Xt  # columns x_q - x_b
        K2 = np.where(coinc[0], 0.0, -4.0 * k2[0])
        K3 = np.where(coinc[0], 0.0, -8.0 * k3[0])
        scale = float(np.sum(K2 * m))
    else:
        Xtil = gram.Xt
        K2, K3 = k2[0], k3[0]
        scale = 0.0
    N = gram.N
    W = np.zeros((2 * N, 2 * N))
    W[:N, :N] = np.diag(K3 * m)
    W[:N, N:] = W[N:, :N] = np.diag(K2)
    F = np.hstack([gram.lam.apply(Xtil), LZ])
    return LowRankHessian(gram.lam, scale, F, W)


def hessian_solve(h: LowRankHessian, g: np.ndarray, ladder=DEFAULT_LADDER,
                  return_damping: bool = False):
    """Solve ``H d = g`` for the diagonal-plus-low-rank Hessian.

    With ``B = diag_scale * L + delta * I`` the push-through form
    ``H^{-1} = B^{-1} - B^{-1} F (I + W F^T B^{-1} F)^{-1} W F^T B^{-1}`` needs
    only a 2N x 2N solve and does not require W to be invertible. The damping
    delta climbs the ladder (scaled by the mean absolute diagonal of H) until
    B and the inner system are both well conditioned. When the diagonal part
    vanishes (dot-product kernels) the minimum-norm solution is returned.
    """
    g = np.asarray(g, dtype=float)
    D = h.D
    if h.diag_scale == 0.0:
        d = _lowrank_pinv_solve(h, g)
        return (d, 0.0) if return_damping else d
    scale = float(np.mean(np.abs(h.diag())))
    if not np.isfinite(scale):
        raise HessianSolveError("non-finite Hessian")
    if scale == 0:
        raise HessianSolveError("Hessian is identically zero")
    dense_lam = h.lam.kind == "dense"
    n2 = h.F.shape[1]
    for delta in ladder:
        if dense_lam:
            B = h.diag_scale * h.lam.matrix(D) + delta * scale * np.eye(D)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                    Binv_F = scipy.linalg.solve(B, np.column_stack([h.F, g]), assume_a="sym")
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
                continue
            Binv_F, Binv_g = Binv_F[:, :n2], Binv_F[:, n2]
        else:
            b = h.diag_scale * h.lam.diag(D) + delta * scale
            if np.min(np.abs(b)) <= 1e-13 * scale:
                continue
            Binv_F = h.F / b[:, None]
            Binv_g = g / b
        inner = np.eye(n2) + h.W @ (h.F.T @ Binv_F)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                y = scipy.linalg.solve(inner, h.W @ (h.F.T @ Binv_g))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
            continue
        d = Binv_g - Binv_F @ y
        if np.all(np.isfinite(d)):
            return (d, delta) if return_damping else d
    raise HessianSolveError("posterior Hessian is singular after exhausting the damping ladder")


def _lowrank_pinv_solve(h: LowRankHessian, g: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Minimum-norm solution of ``F W F^T d = g``.

    Without a diagonal part the Hessian is exactly rank <= 2N and any damping
    ``delta I`` dominates the step on the unobserved complement. The
    pseudo-inverse keeps the step inside span(F) instead.
    """
    U, s, Vt = np.linalg.svd(h.F, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise HessianSolveError("Hessian is identically zero")
    keep = s > 1e-12 * s[0]
    U, s, Vt = U[:, keep], s[keep], Vt[keep]
    core = (s[:, None] * (Vt @ h.W @ Vt.T)) * s[None, :]
    ev, Q = np.linalg.eigh(0.5 * (core + core.T))
    if not np.all(np.isfinite(ev)) or np.max(np.abs(ev)) == 0:
        raise HessianSolveError("posterior Hessian is zero or non-finite")
    inv = np.where(np.abs(ev) > rcond * np.max(np.abs(ev)), 1.0 / np.where(ev == 0, 1.0, ev), 0.0)
    return U @ (Q @ (inv * (Q.T @ (U.T @ g))))


def infer_optimum(current, X: np.ndarray, G: np.ndarray, spec_flipped: KernelSpec,
                  cfg: SolverConfig | None = None, query=None) -> np.ndarray:
    """Posterior mean of the point where the gradient equals ``query`` (default 0).

    The inference is flipped: gradients are the kernel inputs and the
    displacements ``X - current`` are the observations, with prior mean
    ``current``.
    """
    current = np.asarray(current, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    flipped = GradientDataset(G, X - current[:, None])
    sol = solve(flipped, spec_flipped, cfg)
    q = np.zeros_like(current) if query is None else np.asarray(query, dtype=float).ravel()
    return infer_gradient(q, sol.gram, sol.Z, prior_grad=current)


def infer_optimum_quadratic(x_m, g_m, X: np.ndarray, G: np.ndarray, lam,
                            g_a=None) -> np.ndarray:
    """Closed-form flipped inference for the second-order polynomial kernel
    with offset ``c = g_m`` and prior mean ``x_m``.

    With ``Xt = X - x_m``, ``Gt = G - g_m`` and ``S = Gt^T L Gt``,
    ``Z = L^{-1} Xt S^{-1} - 1/2 Gt S^{-1} Gt^T Xt S^{-1}`` and the estimate at
    gradient g_a is ``x_m + L Z (Gt^T L q) + L Gt (Z^T L q)``, ``q = g_a - g_m``.
    The closed form assumes ``Gt^T Xt`` symmetric, as it is for quadratics.
    """
    lam = Lengthscale.coerce(lam)
    x_m = np.asarray(x_m, dtype=float).ravel()
    g_m = np.asarray(g_m, dtype=float).ravel()
    Xt = np.atleast_2d(X) - x_m[:, None]
    Gt = np.atleast_2d(G) - g_m[:, None]
    LG = lam.apply(Gt)
    S = Gt.T @ LG
    try:
        cf = scipy.linalg.cho_factor(0.5 * (S + S.T), lower=True)
    except np.linalg.LinAlgError:
        raise SolverError("Gt^T L Gt is rank deficient: gradient observations are dependent")
    d = np.abs(np.diag(cf[0]))
    if d.min() <= 1e-6 * d.max():  # pivot ratio 1e-6 is cond(S) ~ 1e12
        raise SolverError("Gt^T L Gt is rank deficient: gradient observations are dependent")
    Si = scipy.linalg.cho_solve(cf, np.eye(S.shape[0]))
    Z = lam.solve(Xt @ Si) - 0.5 * Gt @ (Si @ (Gt.T @ Xt) @ Si)
    q = -g_m if g_a is None else np.asarray(g_a, dtype=float).ravel() - g_m
    Lq = lam.apply(q)
    return x_m + lam.apply(Z @ (Gt.T @ Lq)) + LG @ (Z.T @ Lq)


def write_query_csv(path, Xq: np.ndarray, values: np.ndarray, kind: str = "value") -> None:
    """Write batch query results as ``qx1..qxD,value`` or ``qx1..qxD,g1..gD``."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    values = np.asarray(values, dtype=float)
    D, Q = Xq.shape
    header = [f"qx{i + 1}" for i in range(D)]
    if kind == "value":
        header.append("value")
        rows = np.column_stack([Xq.T, values.reshape(Q)])
    elif kind == "gradient":
        header += [f"g{i + 1}" for i in range(values.shape[0])]
        rows = np.column_stack([Xq.T, values.T])
    else:
        raise ValueError(f"unknown kind {kind!r}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" for v in row])
