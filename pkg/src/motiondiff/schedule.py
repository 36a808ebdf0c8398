"""Cosine noise schedule, forward corruption and the Gaussian posterior."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

MAX_BETA = 0.999


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step coefficients for ``T`` diffusion steps.

    Arrays are indexed by step: ``alpha[t]`` and the posterior terms are
    valid for ``t = 1..T`` (index 0 holds a placeholder), ``alpha_bar[0] = 1``.
    """

    T: int
    alpha: np.ndarray
    alpha_bar: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    var: np.ndarray

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside [1, {self.T}]")

    def corrupt(self, x0: np.ndarray, t: int, noise: np.ndarray) -> np.ndarray:
        """Closed-form ``q(x_t | x_0)``; ``t = 0`` returns ``x0`` unchanged."""
        if t == 0:
            return np.array(x0, dtype=np.float64, copy=True)
        self._check(t)
        ab = self.alpha_bar[t]
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise

    def corrupt_step(self, x_prev: np.ndarray, t: int, noise: np.ndarray) -> np.ndarray:
        """One transition of the iterative chain ``q(x_t | x_{t-1})``."""
        self._check(t)
        a = self.alpha[t]
        return np.sqrt(a) * x_prev + np.sqrt(1.0 - a) * noise

    def posterior_mean_var(self, x_t: np.ndarray, x0_hat: np.ndarray, t: int):
        self._check(t)
        return self.c0[t] * x0_hat + self.c1[t] * x_t, self.var[t]

    def posterior_sample(self, x_t: np.ndarray, x0_hat: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
        mean, var = self.posterior_mean_var(x_t, x0_hat, t)
        if var == 0.0:
            return mean
        return mean + np.sqrt(var) * rng.standard_normal(np.shape(mean))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,alpha,alpha_bar,var\n")
        for t in range(self.T + 1):
            a = 1.0 if t == 0 else float(self.alpha[t])
            v = 0.0 if t == 0 else float(self.var[t])
            buf.write(f"{t},{a!r},{float(self.alpha_bar[t])!r},{v!r}\n")
        return buf.getvalue()


def cosine_schedule(T: int, s: float = 0.008) -> DiffusionSchedule:
    """Cosine schedule with per-step ``beta = 1 - alpha`` clipped at 0.999."""
    if T < 1:
        raise ValueError("T must be at least 1")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    ratio = f[1:] / f[:-1]
    alpha = np.concatenate([[1.0], np.clip(ratio, 1.0 - MAX_BETA, 1.0)])
    alpha_bar = np.cumprod(alpha)
    c0 = np.zeros(T + 1)
    c1 = np.zeros(T + 1)
    var = np.zeros(T + 1)
    ab, ab_prev, a = alpha_bar[1:], alpha_bar[:-1], alpha[1:]
    c0[1:] = np.sqrt(ab_prev) * (1.0 - a) / (1.0 - ab)
    c1[1:] = np.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)
    var[1:] = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - a)
    return DiffusionSchedule(T, alpha, alpha_bar, c0, c1, var)
