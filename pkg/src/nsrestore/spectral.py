"""Per-singular-value scaling of the range-space correction and step noise.

When the measurement noise is pushed through a general pseudo-inverse, its
covariance is diagonal in the right-singular basis V of the operator, with
per-coordinate magnitude sigma_y / s_i.  The correction damping Lambda and
the fresh-noise budget Gamma are therefore chosen per coordinate so that
(introduced noise) + (fresh noise) exactly fills the step's variance
budget: D_t + Gamma_t = sigma_t^2 I.

Coordinates whose singular value is (numerically) zero carry no measurement
noise and keep the full budget.  The two sampling strategies differ in the
coefficient in front of sigma_y and in their notion of sigma_t, so each has
its own rule, implemented exactly as derived.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UsageError
from .rng import RngStream
from .schedule import DiffusionSchedule, posterior_coeffs_between
from .svd import SINGULAR_ZERO_RTOL, SvdFactors


@dataclass(frozen=True)
class SpectralScaling:
    mode: str  # "ddpm" | "ddim"
    lambdas: np.ndarray  # (D,), in (0, 1]
    gammas: np.ndarray  # (D,), >= 0
    basis: SvdFactors | None
    eta: float
    sigma_y: float


def _zero_mask(singulars: np.ndarray) -> np.ndarray:
    s = np.asarray(singulars, dtype=np.float64)
    smax = s.max() if s.size else 0.0
    return s <= SINGULAR_ZERO_RTOL * smax


def spectral_lambda_gamma_ddpm(
    s: DiffusionSchedule,
    t: int,
    sigma_y: float,
    singulars,
    t_prev: int | None = None,
    basis: SvdFactors | None = None,
) -> SpectralScaling:
    """Ancestral-mode per-coordinate damping and noise budget.

    With a_t the clean-state coefficient of the reverse step and sigma_t its
    noise level, coordinate i of the introduced noise has scale
    a_t sigma_y lambda_i / s_i; lambda_i caps it at sigma_t and gamma_i
    holds the remaining budget.
    """
    if sigma_y < 0:
        raise UsageError("sigma_y must be nonnegative")
    if t_prev is None:
        t_prev = t - 1
    a, _, sigma = posterior_coeffs_between(s, t, t_prev)
    sing = np.asarray(singulars, dtype=np.float64)
    zero = _zero_mask(sing)
    safe = np.where(zero, 1.0, sing)
    intro = np.where(zero, 0.0, a * sigma_y / safe)  # noise scale at lambda = 1
    lambdas = np.where(intro <= sigma, 1.0, np.where(intro > 0, sigma * safe / max(a * sigma_y, 1e-300), 1.0))
    gammas = np.where(intro <= sigma, sigma**2 - intro**2, 0.0)
    gammas = np.where(zero, sigma**2, gammas)
    lambdas = np.where(zero, 1.0, lambdas)
    return SpectralScaling(
        mode="ddpm", lambdas=lambdas, gammas=gammas, basis=basis, eta=0.0, sigma_y=sigma_y
    )


def spectral_lambda_gamma_ddim(
    s: DiffusionSchedule,
    t: int,
    sigma_y: float,
    eta: float,
    singulars,
    t_prev: int | None = None,
    basis: SvdFactors | None = None,
) -> SpectralScaling:
    """Deterministic-mode rule: sigma_t = sqrt(1 - abar_{t-1}) and the
    introduced-noise scale is sqrt(abar_{t-1}) sigma_y / s_i; the damping
    branch additionally carries sqrt(1 - eta^2)."""
    if sigma_y < 0:
        raise UsageError("sigma_y must be nonnegative")
    if not 0.0 <= eta <= 1.0:
        raise UsageError("eta must lie in [0, 1]")
    if t_prev is None:
        t_prev = t - 1
    s._check(t)
    abar_prev = s.alpha_bar(t_prev)
    sigma = np.sqrt(1.0 - abar_prev)
    root = np.sqrt(abar_prev)
    sing = np.asarray(singulars, dtype=np.float64)
    zero = _zero_mask(sing)
    safe = np.where(zero, 1.0, sing)
    intro = np.where(zero, 0.0, root * sigma_y / safe)
    damped = np.where(
        intro > 0, sing * sigma * np.sqrt(1.0 - eta**2) / max(root * sigma_y, 1e-300), 1.0
    )
    lambdas = np.where(intro <= sigma, 1.0, damped)
    gammas = np.where(intro <= sigma, sigma**2 - intro**2, (sigma * eta) ** 2)
    gammas = np.where(zero, sigma**2, gammas)
    lambdas = np.where(zero, 1.0, lambdas)
    return SpectralScaling(
        mode="ddim", lambdas=lambdas, gammas=gammas, basis=basis, eta=eta, sigma_y=sigma_y
    )


def rectify_spectral(
    f: SvdFactors,
    x0t: np.ndarray,
    y: np.ndarray,
    sc: SpectralScaling,
    op,
) -> np.ndarray:
    """x0t - V Lambda V^T A+ (A x0t - y): per-coordinate damped correction."""
    if f.in_dim != op.in_dim:
        raise DimensionError(f"basis dim {f.in_dim} does not match operator {op.in_dim}")
    if sc.lambdas.size != f.in_dim:
        raise DimensionError("scaling length does not match the basis")
    x0t = np.asarray(x0t, dtype=np.float64)
    residual = op.apply(x0t) - np.asarray(y, dtype=np.float64).reshape(op.out_shape)
    correction = op.pinv_apply(residual).reshape(-1)
    damped = f.v @ (sc.lambdas * (f.v.T @ correction))
    return x0t - damped.reshape(x0t.shape)


def sample_spectral_noise_ddim(
    f: SvdFactors,
    sc: SpectralScaling,
    eps_pred: np.ndarray,
    t: int,
    s: DiffusionSchedule,
    rng: RngStream,
    t_prev: int | None = None,
) -> np.ndarray:
    """The step-noise vector of the deterministic-mode update, in image space.

    Per V-basis coordinate: range coordinates that fit the budget draw fresh
    noise of the remaining variance, over-budget coordinates draw the eta
    share only, and null coordinates keep the usual composition of the
    predicted noise with fresh noise.  Returns V eps_temp.
    """
    if sc.mode != "ddim":
        raise UsageError("spectral noise sampling requires ddim-mode scaling")
    if t_prev is None:
        t_prev = t - 1
    s._check(t)
    abar_prev = s.alpha_bar(t_prev)
    sigma = np.sqrt(1.0 - abar_prev)
    shape = np.asarray(eps_pred).shape
    if sigma == 0.0:
        return np.zeros(shape)
    root = np.sqrt(abar_prev)
    sing = f.singulars_extended()
    zero = _zero_mask(sing)
    safe = np.where(zero, 1.0, sing)
    intro = np.where(zero, 0.0, root * sc.sigma_y / safe)

    fresh = rng.gaussian((f.in_dim,))
    proj_pred = f.v.T @ np.asarray(eps_pred, dtype=np.float64).reshape(-1)
    fits = (~zero) & (intro <= sigma)
    over = (~zero) & (intro > sigma)
    temp = np.empty(f.in_dim)
    temp[fits] = np.sqrt(np.maximum(sigma**2 - intro[fits] ** 2, 0.0)) * fresh[fits]
    temp[over] = sigma * sc.eta * fresh[over]
    temp[zero] = sigma * np.sqrt(1.0 - sc.eta**2) * proj_pred[zero] + sigma * sc.eta * fresh[zero]
    return (f.v @ temp).reshape(shape)
