"""DDPM noise schedule and its exact algebra.

The schedule is kept in float64 numpy; the array operations below accept
numpy arrays or torch tensors (anything supporting elementwise arithmetic)
and preserve the input's type and dtype. t is 1-based throughout: beta[t-1]
is β_t, matching the β_1..β_T indexing of the derivation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """β, α = 1−β, and ᾱ = cumulative product of α, for t = 1..T."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def check_t(self, t: int) -> None:
        if not (1 <= t <= self.T):
            raise ValueError(f"t must be in [1, {self.T}], got {t}")

    def beta_t(self, t: int) -> float:
        self.check_t(t)
        return float(self.beta[t - 1])

    def alpha_t(self, t: int) -> float:
        self.check_t(t)
        return float(self.alpha[t - 1])

    def alpha_bar_t(self, t: int) -> float:
        self.check_t(t)
        return float(self.alpha_bar[t - 1])


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear β schedule from beta_start to beta_end over T steps."""
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def forward_diffuse(schedule: NoiseSchedule, x0, t: int, eps):
    """x_t = √ᾱ_t · x0 + √(1−ᾱ_t) · ε."""
    schedule.check_t(t)
    ab = float(schedule.alpha_bar[t - 1])
    # Plain-float coefficients: numpy and torch both keep the array dtype.
    return float(np.sqrt(ab)) * x0 + float(np.sqrt(1.0 - ab)) * eps


def invert_forward(schedule: NoiseSchedule, x_t, t: int, eps):
    """Recover x0 from x_t and the exact noise: (x_t − √(1−ᾱ_t)ε)/√ᾱ_t."""
    schedule.check_t(t)
    ab = float(schedule.alpha_bar[t - 1])
    return (x_t - float(np.sqrt(1.0 - ab)) * eps) / float(np.sqrt(ab))


def posterior_mean(schedule: NoiseSchedule, x_t, t: int, eps_hat):
    """μ = (1/√α_t) · (x_t − ((1−α_t)/√(1−ᾱ_t)) · ε̂)."""
    schedule.check_t(t)
    a = float(schedule.alpha[t - 1])
    ab = float(schedule.alpha_bar[t - 1])
    coef = (1.0 - a) / float(np.sqrt(1.0 - ab))
    return (x_t - coef * eps_hat) / float(np.sqrt(a))
