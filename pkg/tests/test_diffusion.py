import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import point_mass_model, random_model, standard_normal_model
from laplace_dps.diffusion import (BadParam, DiffusionSchedule, draw_chain_noise,
                                   forward_marginal_sample, load_model, load_samples,
                                   make_schedule, prior_chain, reverse_mean, sample_prior,
                                   save_model, save_samples, train_prior)
from laplace_dps.mlp import TrainConfig


class TestSchedule:
    def test_small_example(self):
        s = make_schedule(3, 0.9)
        np.testing.assert_allclose(s.alpha_bar, [1.0, 0.9, 0.81, 0.729])
        np.testing.assert_allclose(s.beta, [0.1, 0.1, 0.1])
        assert s.beta_tilde[0] == 0.0
        assert s.beta_tilde[1] == pytest.approx(0.0526315789, abs=1e-10)

    def test_long_schedule(self):
        s = make_schedule(100, 0.97)
        assert s.alpha_bar[100] == pytest.approx(0.0475525, abs=1e-7)
        assert np.sqrt(s.alpha_bar[100]) == pytest.approx(0.21807, abs=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 0.999), min_size=1, max_size=40))
    def test_identities(self, alphas):
        s = DiffusionSchedule(np.array(alphas))
        assert s.alpha_bar[0] == 1.0
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(s.beta_tilde >= 0) and np.all(s.beta_tilde <= s.beta + 1e-15)
        np.testing.assert_allclose(s.alpha_bar[1:], np.cumprod(alphas))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 50), st.floats(0.5, 0.99))
    def test_posterior_coefficients_preserve_constants(self, T, a):
        # the posterior mean maps (s0 = x, s_t = sqrt(ab_t) x) to sqrt(ab_{t-1}) x
        s = make_schedule(T, a)
        for t in range(1, T + 1):
            c0, ct = s.posterior_coefficients(t)
            assert c0 + ct * np.sqrt(s.alpha_bar[t]) == pytest.approx(
                np.sqrt(s.alpha_bar[t - 1]), rel=1e-12)

    def test_rejects_bad_parameters(self):
        for bad in (lambda: make_schedule(0, 0.9), lambda: make_schedule(3, 1.0),
                    lambda: make_schedule(3, 0.0), lambda: DiffusionSchedule(np.array([]))):
            with pytest.raises(BadParam):
                bad()
        with pytest.raises(BadParam):
            make_schedule(3, 0.9).check_stage(4)

    def test_read_only(self):
        with pytest.raises(ValueError):
            make_schedule(3, 0.9).alpha_bar[1] = 0.5


def test_forward_marginal_moments(rng):
    s = make_schedule(10, 0.9)
    s0 = np.tile([2.0, -1.0], (200_000, 1))
    for t in (0, 1, 5, 10):
        st_, eps = forward_marginal_sample(s0, t, s, rng)
        np.testing.assert_allclose(st_.mean(axis=0), np.sqrt(s.alpha_bar[t]) * s0[0], atol=0.01)
        np.testing.assert_allclose(st_.var(axis=0), 1 - s.alpha_bar[t], atol=0.01)
        assert eps.shape == s0.shape
    st0, _ = forward_marginal_sample(s0[:3], 0, s, rng)
    np.testing.assert_array_equal(st0, s0[:3])


def test_reverse_first_stage_recovers_estimate(rng):
    # at t = 1 the mean coincides with the clean-sample estimate
    m = random_model(6, 3, seed=1)
    x = rng.normal(size=(5, 3))
    mu, s0_hat = reverse_mean(m, 1, x)
    np.testing.assert_allclose(mu, s0_hat, atol=1e-12)


def test_reverse_mean_single_and_batch(rng):
    m = random_model(4, 2, seed=2)
    x = rng.normal(size=(3, 2))
    mu, _ = reverse_mean(m, 3, x)
    for i in range(3):
        np.testing.assert_allclose(reverse_mean(m, 3, x[i])[0], mu[i], atol=1e-14)


def test_exact_point_mass_predictor_collapses_chain(rng):
    sched = make_schedule(50, 0.95)
    m = point_mass_model(sched, 2)
    for t in (1, 10, 50):
        _, s0_hat = reverse_mean(m, t, rng.normal(size=(4, 2)))
        np.testing.assert_allclose(s0_hat, 0.0, atol=1e-12)
    np.testing.assert_allclose(sample_prior(m, rng, size=20), 0.0, atol=1e-12)


def test_exact_gaussian_predictor_samples_near_standard(rng):
    m = standard_normal_model(make_schedule(100, 0.97), 2)
    x = sample_prior(m, rng, size=5000)
    np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=0.1)
    np.testing.assert_allclose(np.cov(x.T), np.eye(2), atol=0.15)


def analytic_mse(model, optimum, s0_sampler, rng, n=4000):
    """Per-stage, per-coordinate MSE of the learned noise predictor against ``optimum``."""
    out = np.zeros((model.T, model.dim))
    for t in range(1, model.T + 1):
        s_t, _ = forward_marginal_sample(s0_sampler(n), t, model.schedule, rng)
        out[t - 1] = np.mean((model.predict_noise(t, s_t) - optimum(t, s_t)) ** 2, axis=0)
    return out


def test_training_point_mass(rng):
    sched = make_schedule(10, 0.9)
    m = train_prior(np.zeros((1, 2)), sched, TrainConfig(3e-3, 1500, 256, 0), hidden=16)
    mse = analytic_mse(m, lambda t, s: s / np.sqrt(1 - sched.alpha_bar[t]),
                       lambda n: np.zeros((n, 2)), rng)
    assert mse.max() <= 0.1


def test_training_standard_normal(rng):
    sched = make_schedule(10, 0.9)
    data = np.random.default_rng(0).standard_normal((4096, 2))
    m = train_prior(data, sched, TrainConfig(3e-3, 60, 256, 0), hidden=16)
    mse = analytic_mse(m, lambda t, s: np.sqrt(1 - sched.alpha_bar[t]) * s,
                       lambda n: rng.standard_normal((n, 2)), rng)
    assert mse.max() <= 0.1
    assert m.train_loss.shape == (10,)


def test_training_is_reproducible():
    data = np.random.default_rng(0).normal(size=(100, 2))
    cfg = TrainConfig(1e-3, 3, 32, 5)
    a = train_prior(data, make_schedule(3, 0.9), cfg, hidden=8)
    b = train_prior(data, make_schedule(3, 0.9), cfg, hidden=8)
    np.testing.assert_array_equal(a.regressors.w1, b.regressors.w1)
    np.testing.assert_array_equal(a.train_loss, b.train_loss)


def test_training_rejects_empty():
    with pytest.raises(ValueError):
        train_prior(np.zeros((0, 2)), make_schedule(3, 0.9), TrainConfig())


def test_trained_mixture_is_bimodal(quick_mixture_model, rng):
    x = sample_prior(quick_mixture_model, rng, size=2000)
    right = x[:, 0] > 0
    assert 0.35 < right.mean() < 0.65
    assert abs(x[right, 0].mean() - 3.0) < 0.6 and abs(x[~right, 0].mean() + 3.0) < 0.6


def test_sample_prior_shapes_and_determinism():
    m = random_model(5, 3, seed=3)
    assert sample_prior(m, np.random.default_rng(0)).shape == (3,)
    a = sample_prior(m, np.random.default_rng(0), size=4)
    b = sample_prior(m, np.random.default_rng(0), size=4)
    assert a.shape == (4, 3)
    np.testing.assert_array_equal(a, b)
    # the single draw consumes the same stream as the first of a batch
    np.testing.assert_array_equal(sample_prior(m, np.random.default_rng(0)), a[0])


def test_chain_uses_documented_noise_layout():
    m = random_model(4, 2, seed=4)
    noise = draw_chain_noise(np.random.default_rng(9), 4, 2)[None]
    s = noise[0, 4]
    for t in range(4, 0, -1):
        mu, _ = reverse_mean(m, t, s)
        s = mu + np.sqrt(m.schedule.beta_tilde[t - 1]) * noise[0, t - 1]
    np.testing.assert_allclose(prior_chain(m, noise)[0], s, atol=1e-14)


def test_model_round_trip(tmp_path, rng):
    m = random_model(5, 3, seed=6)
    m.train_loss = np.linspace(1, 0.5, 5)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(m, p1)
    m2 = load_model(p1)
    save_model(m2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    x = rng.normal(size=(4, 3))
    for t in range(1, 6):
        np.testing.assert_array_equal(m.predict_noise(t, x), m2.predict_noise(t, x))
    np.testing.assert_array_equal(m.schedule.alpha, m2.schedule.alpha)


def test_model_version_checked(tmp_path):
    p = tmp_path / "m.json"
    save_model(random_model(2, 2, seed=0), p)
    p.write_text(p.read_text().replace('"format_version": 1', '"format_version": 9'))
    with pytest.raises(ValueError):
        load_model(p)


def test_samples_round_trip(tmp_path, rng):
    x = rng.normal(size=(7, 3))
    save_samples(x, tmp_path / "s.csv")
    np.testing.assert_array_equal(load_samples(tmp_path / "s.csv"), x)
    save_samples(x[:1], tmp_path / "one.csv")
    assert load_samples(tmp_path / "one.csv").shape == (1, 3)
