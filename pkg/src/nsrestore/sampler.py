"""Reverse-diffusion restoration loops.

Every loop walks a descending time grid and repeats three moves: estimate
the clean state from the current noisy one, rectify that estimate so its
range-space part agrees with the measurement, and step to the previous
grid time by re-noising the rectified estimate.

The plain loop (`run_ddnm`) pins the range space exactly each step, which
guarantees A x0 = y at the end of a noise-free run.  The enhanced loop
(`run_ddnm_plus`) additionally damps the correction and shrinks the fresh
step noise so that measurement noise carried into the state stays on the
schedule's budget, and can repeatedly re-noise and re-descend blocks of
steps (the travel plan) to repair global structure on hard tasks.

With damping disabled, a noise-free measurement, and no travel, the
enhanced loop takes exactly the plain loop's code path, so the two produce
bitwise-identical outputs under a shared seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserHandle
from .errors import DimensionError, UsageError
from .operators import LinearOperator, null_project
from .rng import RngStream
from .schedule import DiffusionSchedule, posterior_coeffs_between, time_grid
from .spectral import (
    rectify_spectral,
    sample_spectral_noise_ddim,
    spectral_lambda_gamma_ddim,
    spectral_lambda_gamma_ddpm,
)
from .svd import SvdFactors


@dataclass(frozen=True)
class RestorationProblem:
    op: LinearOperator
    y: np.ndarray
    sigma_y: float = 0.0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.size != self.op.out_dim:
            raise DimensionError(
                f"measurement has {y.size} entries, operator produces {self.op.out_dim}"
            )
        if not math.isfinite(self.sigma_y) or self.sigma_y < 0:
            raise UsageError("sigma_y must be finite and nonnegative")


@dataclass(frozen=True)
class SamplerParams:
    steps: int
    eta: float = 0.85
    mode: str = "ddpm"  # "ddpm" | "ddim"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ddpm", "ddim"):
            raise UsageError(f"unknown sampler mode {self.mode!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise UsageError("eta must lie in [0, 1]")
        if self.steps < 1:
            raise UsageError("steps must be positive")


@dataclass(frozen=True)
class TimeTravelParams:
    l: int = 0
    s: int = 1
    r: int = 1

    def __post_init__(self):
        if self.l < 0 or self.s < 1 or self.r < 1:
            raise UsageError("need l >= 0, s >= 1, r >= 1")


@dataclass(frozen=True)
class NoiseScalingSimple:
    lambda_t: float
    gamma_t: float


PLAIN_DESCENT = TimeTravelParams(l=0, s=1, r=1)


def estimate_x0(s: DiffusionSchedule, d: DenoiserHandle, x_t, t: int) -> np.ndarray:
    """Clean-state estimate (x_t - sqrt(1 - abar_t) eps(x_t, t)) / sqrt(abar_t)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = d.predict(x_t, t)
    return _x0_from_eps(s, x_t, eps, t)


def _x0_from_eps(s: DiffusionSchedule, x_t, eps, t: int) -> np.ndarray:
    abar = s.alpha_bar(t)
    return (x_t - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)


def rectify(op: LinearOperator, x0t, y) -> np.ndarray:
    """Replace the range-space part of the estimate with A+ y.

    The null-space part of x0t is carried over untouched, so applying the
    operator to the result reproduces y up to the pseudo-inverse residual.
    """
    return op.pinv_apply(y) + null_project(op, x0t)


def rectify_scaled(op: LinearOperator, x0t, y, lambda_t: float) -> np.ndarray:
    """x0t - lambda_t A+ (A x0t - y); lambda_t = 1 delegates to rectify."""
    if not 0.0 < lambda_t <= 1.0:
        raise UsageError(f"lambda_t must lie in (0, 1], got {lambda_t}")
    if lambda_t == 1.0:
        return rectify(op, x0t, y)
    x0t = np.asarray(x0t, dtype=np.float64)
    residual = op.apply(x0t) - np.asarray(y, dtype=np.float64).reshape(op.out_shape)
    return x0t - lambda_t * op.pinv_apply(residual)


def simple_lambda_gamma(
    s: DiffusionSchedule, t: int, sigma_y: float, t_prev: int | None = None
) -> NoiseScalingSimple:
    """Scalar damping and noise budget for copy-style pseudo-inverses.

    The correction keeps full strength while the introduced noise
    a_t lambda sigma_y fits under sigma_t; past that point lambda shrinks to
    spend the whole budget on it and the fresh noise is dropped.
    """
    if sigma_y < 0:
        raise UsageError("sigma_y must be nonnegative")
    if t_prev is None:
        t_prev = t - 1
    a, _, sigma = posterior_coeffs_between(s, t, t_prev)
    intro = a * sigma_y
    if sigma >= intro:
        return NoiseScalingSimple(lambda_t=1.0, gamma_t=sigma**2 - intro**2)
    return NoiseScalingSimple(lambda_t=sigma / intro, gamma_t=0.0)


def _ddim_scalar_scaling(
    s: DiffusionSchedule, t: int, sigma_y: float, eta: float, t_prev: int
) -> NoiseScalingSimple:
    """Scalar form of the deterministic-mode rule at unit singular value."""
    abar_prev = s.alpha_bar(t_prev)
    sigma = np.sqrt(1.0 - abar_prev)
    intro = np.sqrt(abar_prev) * sigma_y
    if sigma >= intro:
        return NoiseScalingSimple(lambda_t=1.0, gamma_t=float(sigma**2 - intro**2))
    return NoiseScalingSimple(
        lambda_t=float(sigma * np.sqrt(1.0 - eta**2) / intro),
        gamma_t=float((sigma * eta) ** 2),
    )


def ddpm_step(
    s: DiffusionSchedule,
    x_t,
    x0hat,
    t: int,
    phi_t: float,
    rng: RngStream,
    t_prev: int | None = None,
) -> np.ndarray:
    """a x0hat + b x_t + sqrt(phi_t) eps over the (t, t_prev) block."""
    if phi_t < 0:
        raise UsageError(f"noise variance must be nonnegative, got {phi_t}")
    if t_prev is None:
        t_prev = t - 1
    a, b, _ = posterior_coeffs_between(s, t, t_prev)
    x = a * np.asarray(x0hat, dtype=np.float64) + b * np.asarray(x_t, dtype=np.float64)
    if phi_t > 0.0:
        x = x + np.sqrt(phi_t) * rng.gaussian(x.shape)
    return x


def ddim_step(
    s: DiffusionSchedule,
    x0hat,
    eps_t,
    t: int,
    eta: float,
    rng: RngStream,
    t_prev: int | None = None,
) -> np.ndarray:
    """sqrt(abar_prev) x0hat + sigma sqrt(1-eta^2) eps_t + sigma eta eps,
    with sigma = sqrt(1 - abar_prev); eta = 0 consumes no randomness."""
    if not 0.0 <= eta <= 1.0:
        raise UsageError("eta must lie in [0, 1]")
    if t_prev is None:
        t_prev = t - 1
    s._check(t)
    abar_prev = s.alpha_bar(t_prev)
    sigma = np.sqrt(1.0 - abar_prev)
    x = np.sqrt(abar_prev) * np.asarray(x0hat, dtype=np.float64)
    if sigma > 0.0:
        x = x + sigma * np.sqrt(1.0 - eta**2) * np.asarray(eps_t, dtype=np.float64)
        if eta > 0.0:
            x = x + sigma * eta * rng.gaussian(x.shape)
    return x


def time_travel_plan(T: int, tt: TimeTravelParams) -> list[tuple]:
    """Deterministic walk over grid positions T..1.

    Entries are ("descend", pos, 0) for one reverse step from position pos,
    or ("renoise", pos, L) for a jump from pos up to pos + L.  After every
    s-th net descent, r rounds of (renoise by min(T - pos, l), descend
    back) are inserted; travel-internal descents do not count toward s.
    """
    if T < 1:
        raise UsageError("need at least one grid step")
    plan: list[tuple] = []
    descents = 0
    pos = T
    while pos >= 1:
        plan.append(("descend", pos, 0))
        pos -= 1
        descents += 1
        if tt.l > 0 and pos >= 1 and descents % tt.s == 0:
            jump = min(T - pos, tt.l)
            if jump > 0:
                for _ in range(tt.r):
                    plan.append(("renoise", pos, jump))
                    for back in range(pos + jump, pos, -1):
                        plan.append(("descend", back, 0))
    return plan


def _reverse_chain(
    d: DenoiserHandle,
    s: DiffusionSchedule,
    rng: RngStream,
    *,
    steps: int,
    mode: str = "ddpm",
    eta: float = 0.85,
    op: LinearOperator | None = None,
    y=None,
    sigma_y: float = 0.0,
    tt: TimeTravelParams = PLAIN_DESCENT,
    spectral: SvdFactors | None = None,
    pin=None,
    trace: dict | None = None,
) -> np.ndarray:
    """Shared restoration loop; all public entry points delegate here."""
    shape = d.shape
    if op is not None:
        if tuple(op.in_shape) != tuple(shape):
            raise DimensionError(f"operator input {op.in_shape} vs denoiser shape {shape}")
        y = np.asarray(y, dtype=np.float64)
        sing_ext = spectral.singulars_extended() if spectral is not None else None

    grid = time_grid(s, steps)[::-1]  # ascending; grid[pos-1] = time at position pos

    def t_at(pos: int) -> int:
        return grid[pos - 1] if pos >= 1 else 0

    x = rng.gaussian(shape)
    for action, pos, jump in time_travel_plan(len(grid), tt):
        if action == "renoise":
            t_from, t_to = t_at(pos), t_at(pos + jump)
            ratio = s.alpha_bar(t_to) / s.alpha_bar(t_from)
            x = np.sqrt(ratio) * x + np.sqrt(1.0 - ratio) * rng.gaussian(shape)
            continue
        t, t_prev = t_at(pos), t_at(pos - 1)
        eps = d.predict(x, t)
        x0 = _x0_from_eps(s, x, eps, t)

        if op is None:
            x0hat = x0
            scaling = None
        elif spectral is not None:
            if mode == "ddpm":
                scaling = spectral_lambda_gamma_ddpm(
                    s, t, sigma_y, sing_ext, t_prev=t_prev, basis=spectral
                )
            else:
                scaling = spectral_lambda_gamma_ddim(
                    s, t, sigma_y, eta, sing_ext, t_prev=t_prev, basis=spectral
                )
            x0hat = rectify_spectral(spectral, x0, y, scaling, op)
        else:
            if mode == "ddpm":
                scaling = simple_lambda_gamma(s, t, sigma_y, t_prev=t_prev)
            else:
                scaling = _ddim_scalar_scaling(s, t, sigma_y, eta, t_prev)
            if scaling.lambda_t > 0.0:
                x0hat = rectify_scaled(op, x0, y, scaling.lambda_t)
            else:
                x0hat = x0  # no noise budget left for the correction

        if pin is not None:
            x0hat = pin(x0hat)
        if trace is not None:
            trace["t"] = t
            trace["x0"] = x0
            trace["x0hat"] = x0hat

        if mode == "ddpm":
            if op is None:
                _, _, sigma = posterior_coeffs_between(s, t, t_prev)
                phi = sigma**2
                x = ddpm_step(s, x, x0hat, t, phi, rng, t_prev=t_prev)
            elif spectral is not None:
                a, b, _ = posterior_coeffs_between(s, t, t_prev)
                x = a * x0hat + b * x
                if np.any(scaling.gammas > 0.0):
                    colored = spectral.v @ (
                        np.sqrt(scaling.gammas) * rng.gaussian((spectral.in_dim,))
                    )
                    x = x + colored.reshape(shape)
            else:
                x = ddpm_step(s, x, x0hat, t, scaling.gamma_t, rng, t_prev=t_prev)
        else:  # ddim
            if spectral is not None:
                abar_prev = s.alpha_bar(t_prev)
                x = np.sqrt(abar_prev) * x0hat + sample_spectral_noise_ddim(
                    spectral, scaling, eps, t, s, rng, t_prev=t_prev
                )
            elif op is not None and sigma_y > 0.0:
                abar_prev = s.alpha_bar(t_prev)
                x = np.sqrt(abar_prev) * x0hat
                if scaling.gamma_t > 0.0:
                    x = x + np.sqrt(scaling.gamma_t) * rng.gaussian(shape)
            else:
                x = ddim_step(s, x0hat, eps, t, eta, rng, t_prev=t_prev)
    return x


def run_ddnm(
    p: RestorationProblem,
    d: DenoiserHandle,
    s: DiffusionSchedule,
    sp: SamplerParams,
    trace: dict | None = None,
) -> np.ndarray:
    """Exact range-space pinning, meant for noise-free measurements.

    A noisy y is accepted but its noise is reproduced in the output, since
    the measurement is pinned verbatim every step.
    """
    return _reverse_chain(
        d,
        s,
        RngStream(sp.seed),
        steps=sp.steps,
        mode=sp.mode,
        eta=sp.eta,
        op=p.op,
        y=p.y,
        sigma_y=0.0,
        trace=trace,
    )


def run_ddnm_plus(
    p: RestorationProblem,
    d: DenoiserHandle,
    s: DiffusionSchedule,
    sp: SamplerParams,
    tt: TimeTravelParams = PLAIN_DESCENT,
    spectral: SvdFactors | None = None,
    trace: dict | None = None,
) -> np.ndarray:
    """Noise-aware restoration with damped corrections and optional travel.

    The scalar damping rule is used unless an operator SVD is supplied, in
    which case the per-singular-value rule runs in its right-singular
    basis.  Damping indices follow the step actually being taken, also
    inside travel re-descents.
    """
    return _reverse_chain(
        d,
        s,
        RngStream(sp.seed),
        steps=sp.steps,
        mode=sp.mode,
        eta=sp.eta,
        op=p.op,
        y=p.y,
        sigma_y=p.sigma_y,
        tt=tt,
        spectral=spectral,
        trace=trace,
    )
