"""Slow, dense oracles used to check the structured code paths.

Nothing here touches the gram/solvers machinery: derivatives come from finite
differences of the scalar kernel or from explicit index loops over the
derivatives of r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SolverError
from .kernels import DotProduct, KernelSpec, eval_r

FD_STEP_2 = 1e-5
FD_STEP_3 = 1e-4


@dataclass
class OracleReport:
    case: str
    fast: object
    oracle: object
    rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error <= self.tolerance)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.case:<48s} rel.err {self.rel_error:9.2e}  tol {self.tolerance:.0e}"


def rel_error(fast, oracle) -> float:
    fast = np.asarray(fast, dtype=float)
    oracle = np.asarray(oracle, dtype=float)
    return float(np.linalg.norm(fast - oracle) / max(np.linalg.norm(oracle), 1e-30))


def compare(case: str, fast, oracle, tol: float) -> OracleReport:
    return OracleReport(case, fast, oracle, rel_error(fast, oracle), tol)


def _k_pairs(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """k(a_p, b_p) for paired columns, evaluated in extended precision.

    Second differences lose about eps / h^2 to cancellation; long double
    arithmetic keeps that well below the truncation error.
    """
    D = A.shape[0]
    Lam = spec.lam.matrix(D).astype(np.longdouble)
    if isinstance(spec.metric, DotProduct):
        if spec.metric.offset is not None:
            c = spec.metric.offset.astype(np.longdouble)[:, None]
            A, B = A - c, B - c
        r = np.einsum("ip,ip->p", A, Lam @ B)
    else:
        d = A - B
        r = np.maximum(np.einsum("ip,ip->p", d, Lam @ d), 0)
    return spec.family._derivs(r, 0)[0]


def fd_kernel_hessian(spec: KernelSpec, x_a, x_b, h: float = FD_STEP_2) -> np.ndarray:
    """Mixed second derivatives d^2 k / dx_a^i dx_b^j by central differences."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("step h must lie in [1e-7, 1e-3]")
    x_a = np.asarray(x_a, dtype=np.longdouble).ravel()
    x_b = np.asarray(x_b, dtype=np.longdouble).ravel()
    D = x_a.shape[0]
    hl = np.longdouble(h)
    E = np.eye(D, dtype=np.longdouble) * hl
    # column (i, j) of the shifted copies, i major
    Ea = np.repeat(E, D, axis=1)
    Eb = np.tile(E, (1, D))
    A_p = x_a[:, None] + Ea
    A_m = x_a[:, None] - Ea
    B_p = x_b[:, None] + Eb
    B_m = x_b[:, None] - Eb
    out = (_k_pairs(spec, A_p, B_p) - _k_pairs(spec, A_p, B_m)
           - _k_pairs(spec, A_m, B_p) + _k_pairs(spec, A_m, B_m))
    return (out / (4 * hl * hl)).astype(float).reshape(D, D)


def fd_dense_gram(spec: KernelSpec, X: np.ndarray, h: float = FD_STEP_2) -> np.ndarray:
    """Full gradient Gram matrix assembled from finite-difference blocks."""
    D, N = X.shape
    out = np.empty((D * N, D * N))
    for a in range(N):
        for b in range(N):
            out[a * D:(a + 1) * D, b * D:(b + 1) * D] = fd_kernel_hessian(
                spec, X[:, a], X[:, b], h)
    return out


def _r_derivatives(spec: KernelSpec, x_q, x_b):
    """Gradients and second derivatives of r(x_q, x_b) for one pair.

    Returns (dr/dx_q, dr/dx_b, d2r/dx_q dx_q, d2r/dx_q dx_b)."""
    D = x_q.shape[0]
    Lam = spec.lam.matrix(D)
    if isinstance(spec.metric, DotProduct):
        c = np.zeros(D) if spec.metric.offset is None else spec.metric.offset
        return Lam @ (x_b - c), Lam @ (x_q - c), np.zeros((D, D)), Lam
    d = x_q - x_b
    return 2 * Lam @ d, -2 * Lam @ d, 2 * Lam, -2 * Lam


def dense_cross_gradient(spec: KernelSpec, x_q, X: np.ndarray) -> np.ndarray:
    """D x DN matrix of d^2 k(x_q, x_b) / dx_q^i dx_b^l, blocks ordered by b."""
    x_q = np.asarray(x_q, dtype=float)
    D, N = X.shape
    out = np.empty((D, D * N))
    for b in range(N):
        r = eval_r(spec.metric, x_q, X[:, b])
        _, k1, k2 = spec.derivs(np.array(r), 2)
        u, w, _, Xqb = _r_derivatives(spec, x_q, X[:, b])
        out[:, b * D:(b + 1) * D] = k1 * Xqb + k2 * np.outer(u, w)
    return out


def dense_cross_function(spec: KernelSpec, x_q, X: np.ndarray) -> np.ndarray:
    """Row vector (DN,) of dk(x_q, x_b)/dx_b^l."""
    x_q = np.asarray(x_q, dtype=float)
    D, N = X.shape
    out = np.empty(D * N)
    for b in range(N):
        r = eval_r(spec.metric, x_q, X[:, b])
        _, k1 = spec.derivs(np.array(r), 1)
        _, w, _, _ = _r_derivatives(spec, x_q, X[:, b])
        out[b * D:(b + 1) * D] = k1 * w
    return out


def third_derivative_tensor(spec: KernelSpec, x_q, x_b) -> np.ndarray:
    """T[i, j, l] = d^3 k(x_q, x_b) / dx_q^i dx_q^j dx_b^l by explicit loops.

    Both metrics have vanishing third derivatives of r, which leaves
    k'' u^i X^{jl} + k'' u^j X^{il} + k'' H^{ij} w^l + k''' u^i u^j w^l with
    u = dr/dx_q, w = dr/dx_b, H = d2r/dx_q2, X = d2r/dx_q dx_b.
    """
    x_q = np.asarray(x_q, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    D = x_q.shape[0]
    if D > 10:
        raise ValueError("tensor oracle limited to D <= 10")
    r = eval_r(spec.metric, x_q, x_b)
    _, _, k2, k3 = spec.derivs(np.array(r), 3)
    u, w, H, Xqb = _r_derivatives(spec, x_q, x_b)
    T = np.empty((D, D, D))
    for i in range(D):
        for j in range(D):
            for l in range(D):
                T[i, j, l] = (k2 * u[i] * Xqb[j, l] + k2 * u[j] * Xqb[i, l]
                              + k2 * H[i, j] * w[l] + k3 * u[i] * u[j] * w[l])
    return T


def hessian_by_contraction(spec: KernelSpec, x_q, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Posterior-mean Hessian as sum_{b,l} T_b[i, j, l] Z[l, b]."""
    H = np.zeros((X.shape[0], X.shape[0]))
    for b in range(X.shape[1]):
        H += third_derivative_tensor(spec, x_q, X[:, b]) @ Z[:, b]
    return H


def dense_solve_oracle(A: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Solve the dense system A vec(Z) = vec(G) by symmetric-pivot LDL^T."""
    D = G.shape[0]
    if A.shape[0] > 512:
        raise ValueError("dense oracle limited to D*N <= 512")
    lu, d, perm = scipy.linalg.ldl(A, lower=True)
    dvals = np.abs(np.diag(d))
    if dvals.min() <= 1e-14 * dvals.max():
        raise SolverError("dense Gram matrix is singular")
    z = scipy.linalg.solve(A, G.reshape(-1, order="F"), assume_a="sym")
    return z.reshape(D, -1, order="F")


def dense_lstsq_oracle(A: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Minimum-norm solution for rank-deficient (but consistent) systems."""
    D = G.shape[0]
    z = np.linalg.lstsq(A, G.reshape(-1, order="F"), rcond=1e-12)[0]
    return z.reshape(D, -1, order="F")
