"""Linear noise schedule and the forward (noising) process.

Step indices are 1-based: t runs over 1..T, and the cumulative product
convention is alpha_bar_0 = 1, which makes the final reverse step (t=1)
deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and derived quantities of the diffusion chain."""

    beta: np.ndarray        # [T]
    alpha: np.ndarray       # [T], 1 - beta
    alpha_bar: np.ndarray   # [T], cumulative product of alpha
    sigma: np.ndarray       # [T], reverse-step standard deviations

    @property
    def T(self):
        return len(self.beta)

    def _check_t(self, t):
        if not 1 <= t <= self.T:
            raise IndexError(f"step {t} outside 1..{self.T}")


def default_beta_end(T):
    """Scale the reference endpoint (0.02 at T=1000) so that the total
    injected noise, roughly sum(beta), stays comparable across T."""
    return min(2e-2 * 1000.0 / T, 0.999)


def build_linear_schedule(T, beta_start=1e-4, beta_end=2e-2):
    """Linearly spaced betas, endpoints inclusive."""
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    # posterior std, with alpha_bar_0 := 1 so sigma[t=1] is exactly 0
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma = np.sqrt(beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar))
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def forward_chain_step(x_prev, t, sched, rng):
    """One Markov noising step: sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) xi."""
    sched._check_t(t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    beta_t = sched.beta[t - 1]
    noise = rng.standard_normal(x_prev.shape)
    return np.sqrt(1.0 - beta_t) * x_prev + np.sqrt(beta_t) * noise


def q_sample(x0, t, eps, sched):
    """Closed-form jump to step t: sqrt(ab_t) x0 + sqrt(1-ab_t) eps."""
    sched._check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_sigma(t, sched):
    """Reverse-step standard deviation at step t (0 at t=1)."""
    sched._check_t(t)
    return float(sched.sigma[t - 1])
