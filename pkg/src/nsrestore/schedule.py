"""Diffusion noise schedule and its derived per-step quantities.

A schedule over steps t = 1..T is defined by scale factors beta_t in (0, 1).
With alpha_t = 1 - beta_t and abar_t the running product (abar_0 = 1), the
forward process is

    x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps,   eps ~ N(0, I)

and the reverse-step mean is a_t x_0 + b_t x_t with

    a_t = sqrt(abar_{t-1}) beta_t / (1 - abar_t)
    b_t = sqrt(alpha_t) (1 - abar_{t-1}) / (1 - abar_t)
    sigma_t^2 = (1 - abar_{t-1}) beta_t / (1 - abar_t)

abar_0 = 1 makes sigma_1 = 0, so the final reverse step is deterministic.
Accelerated runs subsample the grid; coefficients between two grid times
(t, t_prev) use the same formulas with the effective alpha = abar_t /
abar_{t_prev}.

The default (T = 1000, beta linear from 1e-4 to 0.02) follows the common
convention for this family of models; nothing else in the toolkit depends
on that choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray  # length T, index t-1 holds beta_t
    alphas: np.ndarray
    alpha_bars: np.ndarray  # length T+1, index t holds abar_t, abar_0 = 1
    sigmas: np.ndarray  # length T, index t-1 holds sigma_t

    @property
    def T(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise UsageError(f"time index {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t])

    def sigma(self, t: int) -> float:
        self._check(t)
        return float(self.sigmas[t - 1])

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise UsageError(f"time index {t} outside [1, {self.T}]")


def build_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> DiffusionSchedule:
    """Linear beta schedule over t = 1..T."""
    if not 1 <= T <= 10000:
        raise UsageError(f"T must be in [1, 10000], got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise UsageError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    variances = (1.0 - alpha_bars[:-1]) * betas / (1.0 - alpha_bars[1:])
    return DiffusionSchedule(
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        sigmas=np.sqrt(variances),
    )


def forward_sample(s: DiffusionSchedule, x0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    s._check(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise UsageError(f"x0 {x0.shape} and eps {eps.shape} must match")
    abar = s.alpha_bar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def posterior_coeffs_between(s: DiffusionSchedule, t: int, t_prev: int):
    """(a, b, sigma) for a reverse step from grid time t to grid time t_prev.

    t_prev = t - 1 recovers the single-step coefficients; smaller t_prev
    uses the effective alpha = abar_t / abar_{t_prev} of the skipped block.
    """
    s._check(t)
    if not 0 <= t_prev < t:
        raise UsageError(f"t_prev {t_prev} must lie in [0, {t})")
    abar_t = s.alpha_bar(t)
    abar_prev = s.alpha_bar(t_prev)
    alpha_eff = abar_t / abar_prev
    beta_eff = 1.0 - alpha_eff
    denom = 1.0 - abar_t
    a = np.sqrt(abar_prev) * beta_eff / denom
    b = np.sqrt(alpha_eff) * (1.0 - abar_prev) / denom
    variance = (1.0 - abar_prev) * beta_eff / denom
    return float(a), float(b), float(np.sqrt(variance))


def posterior_coeffs(s: DiffusionSchedule, t: int):
    """(a_t, b_t, sigma_t) of the single-step reverse kernel."""
    return posterior_coeffs_between(s, t, t - 1)


def time_grid(s: DiffusionSchedule, steps: int) -> list[int]:
    """Descending sampling times: `steps` evenly spaced indices in [1, T],
    always including both endpoints. Rounding collisions collapse."""
    if not 1 <= steps <= s.T:
        raise UsageError(f"steps must be in [1, {s.T}], got {steps}")
    if steps == 1:
        return [s.T]
    raw = np.linspace(1, s.T, steps)
    ts = sorted({int(round(v)) for v in raw})
    ts[0], ts[-1] = 1, s.T
    return ts[::-1]
