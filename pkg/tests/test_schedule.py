import numpy as np
import pytest

from bigraphdiff.errors import ConfigurationError, ShapeError
from bigraphdiff.schedule import (
    build_linear_schedule, default_beta_end, forward_chain_step,
    posterior_sigma, q_sample,
)


def cumulative_products(beta):
    # independent of np.cumprod on purpose
    out = []
    acc = 1.0
    for b in beta:
        acc *= 1.0 - b
        out.append(acc)
    return np.array(out)


def test_linear_endpoints_inclusive():
    s = build_linear_schedule(1000, 1e-4, 2e-2)
    assert s.T == 1000
    assert s.beta[0] == pytest.approx(1e-4)
    assert s.beta[-1] == pytest.approx(2e-2)
    assert np.all(np.diff(s.beta) >= 0)


def test_hand_case_T4():
    s = build_linear_schedule(4, 0.1, 0.4)
    assert np.allclose(s.beta, [0.1, 0.2, 0.3, 0.4], atol=1e-15)
    assert np.allclose(s.alpha, [0.9, 0.8, 0.7, 0.6], atol=1e-15)
    assert np.allclose(s.alpha_bar, [0.9, 0.72, 0.504, 0.3024], atol=1e-12)


def test_alpha_bar_matches_independent_script():
    s = build_linear_schedule(100, 1e-4, 0.2)
    assert np.array_equal(s.alpha_bar, cumulative_products(s.beta)) or \
        np.abs(s.alpha_bar - cumulative_products(s.beta)).max() < 1e-15


def test_single_step():
    s = build_linear_schedule(1, 0.3, 0.3)
    assert s.alpha_bar[0] == pytest.approx(0.7)


def test_alpha_bar_strictly_decreasing():
    s = build_linear_schedule(50, 1e-3, 0.1)
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert 0 < s.alpha_bar[-1] < s.alpha_bar[0] < 1


def test_invalid_range_rejected():
    with pytest.raises(ConfigurationError):
        build_linear_schedule(10, 0.5, 0.2)
    with pytest.raises(ConfigurationError):
        build_linear_schedule(10, 0.0, 0.2)
    with pytest.raises(ConfigurationError):
        build_linear_schedule(0, 0.1, 0.2)


def test_default_beta_end_scaling():
    assert default_beta_end(1000) == pytest.approx(2e-2)
    assert default_beta_end(100) == pytest.approx(0.2)
    assert default_beta_end(10) <= 0.999


class TestForwardChain:
    def test_zero_variance_limit(self, rng):
        s = build_linear_schedule(3, 1e-12, 1e-12)
        x = rng.standard_normal(5)
        out = forward_chain_step(x, 1, s, rng)
        assert np.abs(out - x).max() < 1e-5

    def test_determinism(self):
        s = build_linear_schedule(10, 0.01, 0.1)
        x = np.ones(4)
        a = forward_chain_step(x, 3, s, np.random.default_rng(7))
        b = forward_chain_step(x, 3, s, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_t_out_of_range(self, rng):
        s = build_linear_schedule(10, 0.01, 0.1)
        with pytest.raises(IndexError):
            forward_chain_step(np.ones(2), 0, s, rng)
        with pytest.raises(IndexError):
            forward_chain_step(np.ones(2), 11, s, rng)

    def test_chain_matches_closed_form_moments(self, rng):
        # iterate t=1..T for many scalar trials; compare with q_sample stats
        s = build_linear_schedule(8, 0.05, 0.3)
        trials = 100_000
        x0 = 1.7
        x = np.full(trials, x0)
        for t in range(1, s.T + 1):
            x = forward_chain_step(x, t, s, rng)
        mean_expect = np.sqrt(s.alpha_bar[-1]) * x0
        var_expect = 1.0 - s.alpha_bar[-1]
        se_mean = np.sqrt(var_expect / trials)
        assert abs(x.mean() - mean_expect) < 3 * se_mean
        se_var = var_expect * np.sqrt(2.0 / (trials - 1))
        assert abs(x.var() - var_expect) < 3 * se_var


class TestQSample:
    def test_zero_noise(self):
        s = build_linear_schedule(4, 0.1, 0.4)
        x0 = np.array([2.0, -1.0])
        out = q_sample(x0, 2, np.zeros(2), s)
        assert np.allclose(out, np.sqrt(0.72) * x0, atol=1e-15)

    def test_hand_case(self):
        # alpha_bar = 0.25 with T=1, beta=0.75
        s = build_linear_schedule(1, 0.75, 0.75)
        out = q_sample(np.array([2.0]), 1, np.array([1.0]), s)
        assert out[0] == pytest.approx(0.5 * 2.0 + np.sqrt(0.75), abs=1e-10)
        assert out[0] == pytest.approx(1.86603, abs=1e-5)

    def test_shape_mismatch(self):
        s = build_linear_schedule(4, 0.1, 0.4)
        with pytest.raises(ShapeError):
            q_sample(np.zeros(3), 1, np.zeros(4), s)

    def test_terminal_distribution_near_standard_normal(self, rng):
        s = build_linear_schedule(100, 1e-4, 0.2)
        assert s.alpha_bar[-1] < 1e-4
        x0 = np.full(50_000, 3.0)
        eps = rng.standard_normal(50_000)
        out = q_sample(x0, s.T, eps, s)
        assert abs(out.mean()) < 0.05
        assert abs(out.std() - 1.0) < 0.02


class TestPosteriorSigma:
    def test_first_step_deterministic(self):
        s = build_linear_schedule(4, 0.1, 0.4)
        assert posterior_sigma(1, s) == 0.0

    def test_hand_case(self):
        s = build_linear_schedule(4, 0.1, 0.4)
        expected = np.sqrt(0.2 * (1 - 0.9) / (1 - 0.72))
        assert posterior_sigma(2, s) == pytest.approx(expected, abs=1e-12)
        assert posterior_sigma(2, s) == pytest.approx(0.26726, abs=1e-5)

    def test_sigma_sq_below_beta(self):
        s = build_linear_schedule(64, 1e-4, 0.3)
        assert np.all(s.sigma**2 <= s.beta + 1e-15)

    def test_out_of_range(self):
        s = build_linear_schedule(4, 0.1, 0.4)
        with pytest.raises(IndexError):
            posterior_sigma(5, s)
