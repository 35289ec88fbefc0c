import csv

import numpy as np
import pytest

from gradgp.errors import LineSearchError
from gradgp.kernels import make_kernel
from gradgp.optim import (TRACE_HEADER, GPState, LineSearchConfig, OptimizerConfig, gp_step,
                          line_search, minimize)
from gradgp.problems import QuadraticProblem, random_orthonormal, relaxed_rosenbrock


def _half_norm(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * float(x @ x), x.copy()


# ---------------------------------------------------------------------------
# line search


def test_line_search_accepts_exact_unit_step():
    res = line_search(lambda a: ((a - 1.0) ** 2, 2.0 * (a - 1.0)), 1.0)
    assert res.alpha == 1.0 and res.wolfe and res.evaluations == 1


@pytest.mark.parametrize("alpha0", [1e-3, 0.5, 10.0, 1e3])
def test_line_search_result_satisfies_strong_wolfe(alpha0):
    cfg = LineSearchConfig()
    def phi(a):
        with np.errstate(over="ignore"):  # huge trial steps overflow to inf
            return np.cosh(a - 2.0), np.sinh(a - 2.0)
    f0, d0 = phi(0.0)
    res = line_search(phi, alpha0, cfg)
    assert res.wolfe
    assert res.phi <= f0 + cfg.c1 * res.alpha * d0
    assert abs(res.slope) <= -cfg.c2 * d0


def test_line_search_rejects_ascent_direction():
    with pytest.raises(LineSearchError):
        line_search(lambda a: (a, 1.0), 1.0)
    with pytest.raises(LineSearchError):
        line_search(lambda a: (1.0, 0.0), 1.0)


def test_line_search_survives_non_finite_trial():
    # phi is infinite beyond 1: the search must back off rather than accept it
    def phi(a):
        return (np.inf, np.inf) if a > 1.0 else ((a - 0.8) ** 2, 2 * (a - 0.8))
    res = line_search(phi, 5.0)
    assert 0 < res.alpha <= 1.0 and np.isfinite(res.phi)


def test_line_search_config_validation():
    with pytest.raises(ValueError):
        LineSearchConfig(c1=0.9, c2=0.1)
    with pytest.raises(ValueError):
        LineSearchConfig(c1=0.0)


# ---------------------------------------------------------------------------
# direction updates


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(mode="Newton")
    with pytest.raises(ValueError):
        OptimizerConfig(window=0)


def test_first_direction_is_steepest_descent():
    x0 = np.array([0.3, -0.4])
    trace = minimize(_half_norm, x0, OptimizerConfig(max_iters=1))
    # unit initial step along -g lands exactly on the minimiser
    assert trace.records[1]["alpha"] == pytest.approx(1.0)
    np.testing.assert_allclose(trace.x, 0.0, atol=1e-15)


def test_window_evicts_oldest_observation():
    st = GPState.start(np.zeros(2), 0.0, np.ones(2), window=2)
    for k in (1.0, 2.0):
        st.x = np.full(2, k)
        st.remember()
    assert len(st.X) == 2
    np.testing.assert_array_equal(np.column_stack(st.X), [[1, 2], [1, 2]])
    unbounded = GPState.start(np.zeros(2), 0.0, np.ones(2), window=None)
    for _ in range(5):
        unbounded.remember()
    assert len(unbounded.X) == 6


def test_uphill_estimate_is_flipped():
    # g decreases as x increases, so extrapolating g to zero points uphill
    cfg = OptimizerConfig(mode="GP-X", flipped_kernel=make_kernel(
        "squared_exponential", lengthscale=0.01))
    st = GPState.start(np.array([-1.0]), 0.0, np.array([2.0]), window=2)
    st.x, st.f, st.g = np.array([0.0]), 0.0, np.array([1.0])
    step = gp_step(st, cfg)
    assert step.flipped and not step.fallback
    assert step.direction[0] < 0
    assert step.direction[0] == pytest.approx(-1.0, rel=0.05)


def test_degenerate_inference_falls_back_to_steepest_descent():
    # two points with the same gradient give a duplicate input to the flipped GP
    st = GPState.start(np.array([1.0, 0.0]), 0.0, np.array([1.0, 1.0]), window=2)
    st.x, st.g = np.array([2.0, 0.0]), np.array([1.0, 1.0])
    step = gp_step(st, OptimizerConfig(mode="GP-X"))
    assert step.fallback
    np.testing.assert_array_equal(step.direction, -st.g)


def test_gp_h_adds_point_after_inference():
    st = GPState.start(np.array([1.0, 0.0]), 0.5, np.array([1.0, 0.0]), window=3)
    st.x, st.g = np.array([0.5, 0.0]), np.array([0.5, 0.0])
    gp_step(st, OptimizerConfig(mode="GP-H"))
    assert len(st.X) == 2
    np.testing.assert_array_equal(st.X[-1], [0.5, 0.0])


# ---------------------------------------------------------------------------
# full runs


@pytest.mark.parametrize("mode", ["GP-H", "GP-X"])
@pytest.mark.parametrize("D", [1, 5, 100])
def test_isotropic_bowl_from_ones(mode, D):
    cfg = OptimizerConfig(mode=mode, grad_tol=1e-8 / np.sqrt(D))
    trace = minimize(_half_norm, np.ones(D), cfg)
    assert trace.converged and trace.iterations <= 3
    assert np.linalg.norm(trace.x) <= 1e-8


def test_gp_x_quadratic_mode_solves_isotropic_bowl():
    trace = minimize(_half_norm, np.array([3.0, -4.0]), OptimizerConfig(quadratic=True))
    assert trace.converged and trace.iterations <= 3


@pytest.mark.parametrize("mode", ["GP-H", "GP-X"])
def test_rosenbrock_values_decrease(mode):
    x0 = np.random.default_rng(0).standard_normal(10)
    trace = minimize(relaxed_rosenbrock, x0, OptimizerConfig(mode=mode, max_iters=200))
    f = np.array([r["f"] for r in trace.records])
    assert np.all(np.diff(f) <= 0)
    assert trace.converged, trace.message


def test_gp_x_quadratic_mode_is_rotation_invariant():
    rng = np.random.default_rng(1)
    D = 12
    prob = QuadraticProblem.from_spectrum(D, rng)
    Q = random_orthonormal(D, rng)
    rot = QuadraticProblem(Q @ prob.A @ Q.T, Q @ prob.x_star)
    x0 = rng.standard_normal(D)
    cfg = OptimizerConfig(quadratic=True, exact_step=True, max_iters=8, grad_tol=1e-12)
    a, b = minimize(prob, x0, cfg), minimize(rot, Q @ x0, cfg)
    np.testing.assert_allclose(a.grad_norms(), b.grad_norms(), rtol=1e-8)
    np.testing.assert_allclose(Q @ a.x, b.x, rtol=1e-8, atol=1e-10)


def test_minimize_reports_non_finite_start():
    trace = minimize(lambda x: (np.nan, x), np.ones(2))
    assert not trace.converged and "non-finite" in trace.message


def test_trace_csv(tmp_path):
    trace = minimize(_half_norm, np.array([3.0, -4.0]), OptimizerConfig(quadratic=True))
    trace.write_csv(tmp_path / "t.csv", timing=False)
    rows = list(csv.reader((tmp_path / "t.csv").read_text().splitlines()))
    assert ",".join(rows[0]) == TRACE_HEADER
    assert len(rows) == len(trace.records) + 1
    assert all(r[-1] == "" for r in rows[1:])
    assert float(rows[1][2]) == 5.0
    assert trace.iterations_to(1e-5) == trace.iterations
