import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradgp.errors import SolverError
from gradgp.gram import GradientDataset, build_gram, materialize_dense
from gradgp.kernels import make_kernel
from gradgp.reference import (OracleReport, compare, dense_cross_function, dense_lstsq_oracle,
                              dense_solve_oracle, fd_kernel_hessian, rel_error,
                              third_derivative_tensor)
from gradgp.solvers import solve_woodbury

from helpers import KERNELS, random_kernel


def _poly2(D):
    return make_kernel("polynomial", "dot", 1.0, np.zeros(D), p=2)


def test_fd_hessian_examples():
    se = make_kernel("squared_exponential")
    np.testing.assert_allclose(fd_kernel_hessian(se, [0.3, -0.2], [0.3, -0.2]), np.eye(2),
                               atol=1e-8)
    np.testing.assert_allclose(fd_kernel_hessian(_poly2(2), [1.0, 0.0], [1.0, 0.0]),
                               [[2.0, 0.0], [0.0, 1.0]], atol=1e-8)


def test_fd_step_domain():
    se = make_kernel("squared_exponential")
    for h in (1e-8, 1e-2):
        with pytest.raises(ValueError):
            fd_kernel_hessian(se, [0.0], [1.0], h=h)


def test_cross_function_is_gradient_of_kernel():
    rng = np.random.default_rng(0)
    spec = make_kernel("rational_quadratic", lengthscale=0.7, alpha=1.5)
    x_q, X = rng.standard_normal(3), rng.standard_normal((3, 2))
    row = dense_cross_function(spec, x_q, X)
    h = 1e-6
    for b in range(2):
        for l, e in enumerate(np.eye(3)):
            k = lambda xb: spec.derivs(np.array(np.sum(0.7 * (x_q - xb) ** 2)), 0)[0]  # noqa: E731
            fd = (k(X[:, b] + h * e) - k(X[:, b] - h * e)) / (2 * h)
            assert row[b * 3 + l] == pytest.approx(float(fd), rel=1e-6, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(range(len(KERNELS))))
def test_third_derivative_tensor_symmetric_in_query_indices(seed, k):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, 6))
    spec = random_kernel(rng, D, *KERNELS[k])
    T = third_derivative_tensor(spec, rng.standard_normal(D), rng.standard_normal(D))
    np.testing.assert_allclose(T, T.transpose(1, 0, 2), rtol=1e-12, atol=1e-14)


def test_third_derivative_tensor_size_cap():
    spec = make_kernel("squared_exponential")
    with pytest.raises(ValueError):
        third_derivative_tensor(spec, np.zeros(11), np.ones(11))


def test_dense_solve_reproduces_woodbury_example():
    g = build_gram(GradientDataset(np.array([[1.0], [0.0]]), np.array([[2.0], [1.0]])), _poly2(2))
    Z = dense_solve_oracle(materialize_dense(g), np.array([[2.0], [1.0]]))
    np.testing.assert_allclose(Z, [[1.0], [1.0]], rtol=1e-14)
    np.testing.assert_allclose(Z, solve_woodbury(g, np.array([[2.0], [1.0]])).Z, rtol=1e-12)


def test_dense_solve_rejects_singular_and_large():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SolverError):
        dense_solve_oracle(A, np.ones((2, 1)))
    np.testing.assert_allclose(dense_lstsq_oracle(A, np.ones((2, 1))), [[0.5], [0.5]])
    with pytest.raises(ValueError):
        dense_solve_oracle(np.eye(513), np.ones((513, 1)))


def test_oracle_report():
    rep = compare("toy case", [1.0, 2.0], [1.0, 2.0 + 1e-9], 1e-8)
    assert rep.passed
    assert rep.line().startswith("PASS  toy case")
    assert "tol 1e-08" in rep.line()
    bad = OracleReport("bad", 1.0, 2.0, rel_error(1.0, 2.0), 1e-3)
    assert not bad.passed and bad.line().startswith("FAIL")
    # a zero oracle falls back to the absolute error instead of dividing by zero
    assert rel_error([1e-40], [0.0]) == pytest.approx(1e-10)
