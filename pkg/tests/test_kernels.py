from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradgp.errors import KernelDomainError, SingularityError
from gradgp.kernels import (FAMILIES, Lengthscale, eval_k_derivs, eval_r, format_config,
                            kernel_from_config, make_kernel, parse_config_text, r_matrix)

from helpers import KERNELS, KERNEL_IDS

ALL_FAMILIES = KERNELS + [("matern", "stationary", {"nu": 0.5})]


def _spec(family, metric, params, D=3):
    return make_kernel(family, metric, 1.0, np.zeros(D) if metric == "dot" else None, **params)


# ---------------------------------------------------------------------------
# eval_r


def test_eval_r_dot_product():
    m = make_kernel("polynomial", "dot", 1.0, np.zeros(2)).metric
    assert eval_r(m, [1, 2], [3, 4]) == 11


def test_eval_r_stationary():
    m = make_kernel("squared_exponential").metric
    assert eval_r(m, [1, 2], [1, 2]) == 0
    assert eval_r(m, [1, 2], [3, 4]) == 8


def test_eval_r_offset_and_scaling():
    m = make_kernel("polynomial", "dot", [2.0, 0.5], [1.0, -1.0]).metric
    # (x_a - c)' diag(2, 0.5) (x_b - c) = 0*2*2 + 3*0.5*5
    assert eval_r(m, [1, 2], [3, 4]) == pytest.approx(7.5)


def test_eval_r_dimension_mismatch():
    m = make_kernel("squared_exponential").metric
    with pytest.raises(ValueError):
        eval_r(m, [1, 2], [1, 2, 3])
    m2 = make_kernel("squared_exponential", lengthscale=[1.0, 2.0]).metric
    with pytest.raises(ValueError):
        eval_r(m2, [1, 2, 3], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_r_matrix_matches_eval_r(seed, D):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((D, 3)), rng.standard_normal((D, 2))
    for metric in ("dot", "stationary"):
        spec = make_kernel("polynomial" if metric == "dot" else "squared_exponential", metric,
                           rng.uniform(0.5, 2, D), rng.standard_normal(D) if metric == "dot" else None)
        R = r_matrix(spec.metric, A, B)
        ref = [[eval_r(spec.metric, A[:, i], B[:, j]) for j in range(2)] for i in range(3)]
        np.testing.assert_allclose(R, ref, rtol=1e-12, atol=1e-12)
        if metric == "stationary":
            assert np.all(R >= 0)


# ---------------------------------------------------------------------------
# eval_k_derivs


def test_polynomial2_values():
    assert eval_k_derivs(_spec("polynomial", "dot", {"p": 2}), 3.0) == pytest.approx((4.5, 3, 1, 0))


def test_squared_exponential_origin():
    vals = eval_k_derivs(make_kernel("squared_exponential"), 0.0)
    assert vals == pytest.approx((1, -0.5, 0.25, -0.125))


@pytest.mark.parametrize("nu, k1", [("3/2", -1.5), ("5/2", -5.0 / 6.0)])
def test_matern_origin_limit(nu, k1):
    spec = make_kernel("matern", nu=nu)
    at0 = eval_k_derivs(spec, 0.0, order=1)
    assert at0[0] == 1.0
    assert at0[1] == pytest.approx(k1, rel=1e-12)
    near = eval_k_derivs(spec, 1e-8, order=1)
    assert near[0] == pytest.approx(at0[0], rel=1e-6)
    assert near[1] == pytest.approx(at0[1], rel=1e-3)


def test_matern_higher_derivatives_diverge_at_origin():
    with pytest.raises(SingularityError):
        eval_k_derivs(make_kernel("matern", nu="3/2"), 0.0, order=2)
    with pytest.raises(SingularityError):
        eval_k_derivs(make_kernel("matern", nu="5/2"), 0.0, order=3)
    assert eval_k_derivs(make_kernel("matern", nu="5/2"), 0.0, order=2)[2] == pytest.approx(25 / 12)


def test_matern_half_is_singular_at_origin():
    spec = make_kernel("matern", nu="1/2")
    assert not spec.differentiable
    assert eval_k_derivs(spec, 0.0, order=0) == (1.0,)
    with pytest.raises(SingularityError):
        eval_k_derivs(spec, 0.0)


def test_stationary_negative_r_is_domain_error():
    with pytest.raises(KernelDomainError):
        eval_k_derivs(make_kernel("squared_exponential"), -1.0)


@pytest.mark.parametrize("family, metric, params", ALL_FAMILIES,
                         ids=KERNEL_IDS + ["matern-0.5"])
def test_derivatives_match_finite_differences(family, metric, params):
    """Central differences with h = 1e-5 at 100 random r, each derivative order."""
    spec = _spec(family, metric, params)
    rng = np.random.default_rng(7)
    lo = -3.0 if metric == "dot" else 0.05
    h = 1e-5
    for r in rng.uniform(lo, 4.0, 100):
        vals = eval_k_derivs(spec, r)
        plus, minus = eval_k_derivs(spec, r + h), eval_k_derivs(spec, r - h)
        for n in range(3):
            fd = (plus[n] - minus[n]) / (2 * h)
            assert abs(fd - vals[n + 1]) <= 1e-5 * max(abs(vals[n + 1]), 1e-3), (r, n)


@pytest.mark.parametrize("family, params", [("squared_exponential", {}),
                                            ("matern", {"nu": 1.5}), ("matern", {"nu": 2.5}),
                                            ("matern", {"nu": 0.5}),
                                            ("rational_quadratic", {"alpha": 0.7})])
def test_stationary_values_bounded_by_origin(family, params):
    spec = make_kernel(family, **params)
    k0 = eval_k_derivs(spec, 0.0, order=0)[0]
    for r in np.linspace(0, 50, 201):
        assert abs(eval_k_derivs(spec, r, order=0)[0]) <= k0


def test_eval_k_derivs_is_pure():
    spec = make_kernel("rational_quadratic", alpha=2.0)
    assert eval_k_derivs(spec, 0.7) == eval_k_derivs(spec, 0.7)


def test_rational_quadratic_default_alpha():
    assert make_kernel("rational_quadratic").family.alpha == 1.0


# ---------------------------------------------------------------------------
# pairing, families and lengthscales


@pytest.mark.parametrize("family", ["polynomial", "exponential"])
def test_dot_families_reject_stationary(family):
    with pytest.raises(ValueError):
        make_kernel(family, "stationary")


@pytest.mark.parametrize("family", ["squared_exponential", "matern", "rational_quadratic"])
def test_stationary_families_reject_dot(family):
    with pytest.raises(ValueError):
        make_kernel(family, "dot", 1.0, np.zeros(2))


def test_family_parameter_validation():
    with pytest.raises(ValueError):
        make_kernel("polynomial", "dot", p=1)
    with pytest.raises(ValueError):
        make_kernel("matern", nu="7/2")
    with pytest.raises(ValueError):
        make_kernel("rational_quadratic", alpha=0.0)
    with pytest.raises(ValueError):
        make_kernel("cosine")
    assert set(FAMILIES) >= {"polynomial", "exponential", "squared_exponential", "matern",
                             "rational_quadratic"}


def test_lengthscale_validation():
    with pytest.raises(ValueError):
        Lengthscale.isotropic(0.0)
    with pytest.raises(ValueError):
        Lengthscale.diagonal([1.0, -1.0])
    with pytest.raises(ValueError):
        Lengthscale.dense([[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(ValueError):
        Lengthscale.dense([[1.0, 0.5], [0.0, 1.0]])  # not symmetric


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.sampled_from(["iso", "diag", "dense"]))
def test_lengthscale_apply_solve_are_inverse(seed, D, kind):
    rng = np.random.default_rng(seed)
    if kind == "iso":
        lam = Lengthscale.isotropic(rng.uniform(0.1, 10))
    elif kind == "diag":
        lam = Lengthscale.diagonal(rng.uniform(0.1, 10, D))
    else:
        B = rng.standard_normal((D, D))
        lam = Lengthscale.dense(B @ B.T + D * np.eye(D))
    V = rng.standard_normal((D, 3))
    for W in (lam.solve(lam.apply(V)), lam.apply(lam.solve(V))):
        assert np.linalg.norm(W - V) <= 1e-12 * np.linalg.norm(V) * max(1.0, D)
    np.testing.assert_allclose(lam.matrix(D) @ V, lam.apply(V), rtol=1e-12, atol=1e-12)
    if kind != "dense":
        np.testing.assert_allclose(np.diag(lam.matrix(D)), lam.diag(D), rtol=1e-12)


# ---------------------------------------------------------------------------
# configuration


@pytest.mark.parametrize("spec", [
    make_kernel("matern", "stationary", [1.0, 2.0], nu=Fraction(5, 2)),
    make_kernel("polynomial", "dot", 0.5, [0.5, 1.0], p=3),
    make_kernel("rational_quadratic", "stationary", 0.25, alpha=1.5),
    make_kernel("exponential", "dot", [1.0, 3.0], [0.0, 2.0]),
], ids=lambda s: repr(s.family))
def test_config_round_trip(spec):
    back = kernel_from_config(parse_config_text(format_config(spec.to_config())))
    assert repr(back.family) == repr(spec.family)
    assert type(back.metric) is type(spec.metric)
    np.testing.assert_array_equal(back.lam.diag(2), spec.lam.diag(2))
    x, y = np.array([0.3, -0.2]), np.array([1.0, 0.4])
    assert eval_r(back.metric, x, y) == eval_r(spec.metric, x, y)


def test_parse_config_comments_and_errors():
    cfg = parse_config_text("# kernel\nfamily = matern  # smooth\n\nnu = 3/2\n")
    assert cfg == {"family": "matern", "nu": "3/2"}
    with pytest.raises(ValueError):
        parse_config_text("family matern")
