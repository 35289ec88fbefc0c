import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradgp.errors import DivergenceError, GradGPError
from gradgp.hmc import (BananaTarget, HmcConfig, banana_eval, hmc_chain, leapfrog, run_banana,
                        train_surrogate, write_samples_csv)


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults_for_dim():
    cfg = HmcConfig.for_dim(100)
    assert (cfg.eps, cfg.T, cfg.burn_in, cfg.budget) == (1e-3, 128, 100, 10)
    assert cfg.sq_lengthscale == pytest.approx(40.0)
    rot = HmcConfig.for_dim(100, rotated=True)
    assert rot.eps == 5e-4 and rot.sq_lengthscale == pytest.approx(25.0)
    # D^(1/4) exactly integral must not round up
    assert HmcConfig.for_dim(16).T == 64
    assert HmcConfig.for_dim(20, samples=7).samples == 7


def test_config_validation():
    for bad in (dict(eps=0.0, T=1), dict(eps=0.1, T=0), dict(eps=0.1, T=1, mass=-1.0),
                dict(eps=0.1, T=1, budget=1), dict(eps=0.1, T=1, sq_lengthscale=0.0)):
        with pytest.raises(ValueError):
            HmcConfig(**bad)


# ---------------------------------------------------------------------------
# target


def test_banana_at_origin():
    E, g = banana_eval(BananaTarget(5), np.zeros(5))
    assert E == 2.0
    np.testing.assert_array_equal(g, [0.0, -4.0, 0.0, 0.0, 0.0])


def test_banana_gaussian_coordinates():
    t = BananaTarget(4)
    x = np.array([0.0, 1.0, 0.5, -1.0])
    E0, _ = t(np.array([0.0, 1.0, 0.0, 0.0]))
    E, g = t(x)
    assert E - E0 == pytest.approx(0.5 * 2.0 * (0.25 + 1.0))
    np.testing.assert_allclose(g[2:], 2.0 * x[2:])


def test_banana_validation():
    with pytest.raises(ValueError):
        BananaTarget(2)
    with pytest.raises(ValueError):
        BananaTarget(3, a=np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 8))
def test_banana_gradient_and_rotation(seed, D):
    rng = np.random.default_rng(seed)
    t = BananaTarget.rotated(D, rng)
    x = rng.standard_normal(D)
    E, g = t(x)
    E_al, g_al = BananaTarget(D)(t.rotation @ x)
    assert E == pytest.approx(E_al, rel=1e-12)
    np.testing.assert_allclose(t.rotation @ g, g_al, rtol=1e-10, atol=1e-12)
    h = 1e-6
    fd = np.array([(t(x + h * e)[0] - t(x - h * e)[0]) / (2 * h) for e in np.eye(D)])
    assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))


# ---------------------------------------------------------------------------
# integrator


def test_leapfrog_free_particle():
    x, p = leapfrog([1.0, 2.0], [0.5, -1.0], lambda x: np.zeros(2), T=10, eps=0.1)
    np.testing.assert_allclose(x, [1.5, 1.0])
    np.testing.assert_array_equal(p, [0.5, -1.0])


def test_leapfrog_harmonic_single_step():
    eps = 0.1
    x, p = leapfrog([1.0], [0.0], lambda x: x, T=1, eps=eps)
    assert x[0] == pytest.approx(1 - eps**2 / 2, rel=1e-15)
    assert p[0] == pytest.approx(-eps * (1 - eps**2 / 4), rel=1e-15)


def test_leapfrog_reversible():
    grad = lambda x: BananaTarget(4)(x)[1]  # noqa: E731
    rng = np.random.default_rng(0)
    x0, p0 = 0.3 * rng.standard_normal(4), rng.standard_normal(4)
    x1, p1 = leapfrog(x0, p0, grad, T=50, eps=0.01)
    x2, p2 = leapfrog(x1, -p1, grad, T=50, eps=0.01)
    np.testing.assert_allclose(x2, x0, atol=1e-12)
    np.testing.assert_allclose(-p2, p0, atol=1e-12)


def test_leapfrog_preserves_volume():
    grad = lambda x: BananaTarget(3)(x)[1]  # noqa: E731
    z0 = np.array([0.2, -0.1, 0.4, 0.5, 0.3, -0.7])
    h = 1e-6

    def flow(z):
        x, p = leapfrog(z[:3], z[3:], grad, T=5, eps=0.02)
        return np.concatenate([x, p])

    J = np.column_stack([(flow(z0 + h * e) - flow(z0 - h * e)) / (2 * h) for e in np.eye(6)])
    assert abs(np.linalg.det(J) - 1.0) <= 1e-6


def test_leapfrog_divergence_raises():
    with pytest.raises(DivergenceError):
        leapfrog([0.0], [1.0], lambda x: np.full_like(x, np.inf), T=3, eps=0.1)


# ---------------------------------------------------------------------------
# chains


def test_tiny_steps_are_always_accepted():
    t = BananaTarget(3)
    cfg = HmcConfig(eps=1e-6, T=1, samples=50)
    res = hmc_chain(lambda x: t(x)[0], lambda x: t(x)[1], cfg, np.zeros(3),
                    np.random.default_rng(0))
    assert res.acceptance == 1.0
    assert res.energy_calls == 1 + 50  # one true energy per proposal
    assert res.grad_calls == 50 * (cfg.T + 1)
    assert np.all(np.abs(res.dH) < 1e-9)


def test_chain_rejects_divergent_trajectories():
    t = BananaTarget(3)
    cfg = HmcConfig(eps=5.0, T=20, samples=20)
    with np.errstate(over="ignore", invalid="ignore"):
        res = hmc_chain(lambda x: t(x)[0], lambda x: t(x)[1], cfg, np.zeros(3),
                        np.random.default_rng(1))
    assert res.divergences > 0
    assert np.all(np.isfinite(res.samples))
    assert not np.any(res.accepted[np.isinf(res.dH)])


def test_chain_is_seeded():
    t = BananaTarget(3)
    cfg = HmcConfig(eps=0.1, T=10, samples=30)
    runs = [hmc_chain(lambda x: t(x)[0], lambda x: t(x)[1], cfg, np.zeros(3),
                      np.random.default_rng(5)) for _ in range(2)]
    np.testing.assert_array_equal(runs[0].samples, runs[1].samples)


def test_gaussian_marginals_of_banana():
    t = BananaTarget(4)
    cfg = HmcConfig(eps=0.1, T=15, samples=4000, burn_in=100)
    res = hmc_chain(lambda x: t(x)[0], lambda x: t(x)[1], cfg, np.zeros(4),
                    np.random.default_rng(2))
    mean, var = res.moments()
    np.testing.assert_allclose(mean[2:], 0.0, atol=0.1)
    np.testing.assert_allclose(var[2:], 0.5, atol=0.1)


# ---------------------------------------------------------------------------
# surrogate


def test_train_surrogate_interpolates_observations():
    t = BananaTarget(4)
    cfg = HmcConfig(eps=0.1, T=10, budget=2, sq_lengthscale=0.25)
    model, log = train_surrogate(lambda x: t(x)[0], lambda x: t(x)[1], cfg,
                                 np.random.default_rng(3), np.zeros(4))
    assert model.N == 2 and log.true_grad_obs == 2
    assert np.linalg.norm(model.X[:, 1] - model.X[:, 0]) > cfg.separation
    for b in range(2):
        np.testing.assert_allclose(model(model.X[:, b]), t(model.X[:, b])[1], rtol=1e-8,
                                   atol=1e-10)


def test_train_surrogate_stall_raises():
    t = BananaTarget(3)
    cfg = HmcConfig(eps=0.01, T=2, budget=2, sq_lengthscale=1e6, stall_factor=2)
    with pytest.raises(GradGPError):
        train_surrogate(lambda x: t(x)[0], lambda x: t(x)[1], cfg, np.random.default_rng(0),
                        np.zeros(3))


def test_run_banana_uses_no_true_gradients_while_sampling(tmp_path):
    cfg = HmcConfig(eps=0.05, T=20, samples=100, burn_in=10, budget=3, sq_lengthscale=0.5)
    run = run_banana(4, 0, cfg=cfg)
    assert run.gpg.true_grad_calls == 0
    assert run.log.true_grad_obs == 3
    assert run.plain.true_grad_calls == run.plain.grad_calls
    assert 0.0 < run.gpg.acceptance <= 1.0
    write_samples_csv(tmp_path / "s.csv", run.gpg, run.target)
    rows = list(csv.reader((tmp_path / "s.csv").read_text().splitlines()))
    assert rows[0] == ["idx", "accept", "dH", "x1", "x2"]
    assert len(rows) == 101
    assert all(math.isfinite(float(r[3])) for r in rows[1:])
