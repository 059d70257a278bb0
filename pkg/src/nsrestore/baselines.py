"""Reference restoration loops used for comparison and equivalence tests.

These implement the classic guidance patterns this toolkit's samplers are
measured against: plain ancestral sampling, pinned-region resampling
(repaint), low-pass reference guidance (ilvr), and spectral-domain
restoration (ddrm).  Each consumes the caller's stream for its chain noise
and a derived side stream for reference noising, so a baseline that
degenerates to plain sampling reproduces it bitwise under a shared seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserHandle
from .errors import DimensionError, IncompatibleError, UsageError
from .operators import LinearOperator, MaskOp
from .rng import RngStream
from .sampler import RestorationProblem, _reverse_chain, _x0_from_eps
from .schedule import DiffusionSchedule, posterior_coeffs_between
from .svd import SINGULAR_ZERO_RTOL, SvdFactors


@dataclass(frozen=True)
class RepaintParams:
    resample_counts: int = 1  # inner resampling rounds per step

    def __post_init__(self):
        if self.resample_counts < 1:
            raise UsageError("resample count must be >= 1")


def run_ddpm_uncond(d: DenoiserHandle, s: DiffusionSchedule, rng: RngStream) -> np.ndarray:
    """Plain ancestral sampling over the full grid; the last step adds no noise."""
    return _reverse_chain(d, s, rng, steps=s.T, mode="ddpm")


def _is_mask(op: LinearOperator) -> bool:
    if isinstance(op, MaskOp):
        return True
    return getattr(op, "kind", "") == "mask"


def run_repaint(
    y,
    mask_op: LinearOperator,
    d: DenoiserHandle,
    s: DiffusionSchedule,
    rp: RepaintParams,
    rng: RngStream,
) -> np.ndarray:
    """Pinned-region resampling for inpainting.

    Per step the kept region of the state is overwritten with a freshly
    noised copy of y; each step runs `resample_counts` rounds, re-noising
    one level between rounds with the same draw the step consumed.
    """
    if not _is_mask(mask_op):
        raise IncompatibleError("repaint requires a mask operator (A is its own pseudo-inverse)")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != tuple(d.shape):
        y = y.reshape(d.shape)
    side = rng.child(0)
    x = rng.gaussian(d.shape)
    for t in range(s.T, 0, -1):
        abar_prev = s.alpha_bar(t - 1)
        a, b, sigma = posterior_coeffs_between(s, t, t - 1)
        for round_ in range(rp.resample_counts):
            if t > 1:
                eps1 = side.gaussian(d.shape)
                eps2 = rng.gaussian(d.shape)
            else:
                eps1 = np.zeros(d.shape)
                eps2 = np.zeros(d.shape)
            y_prev = mask_op.apply(np.sqrt(abar_prev) * y + np.sqrt(1.0 - abar_prev) * eps1)
            x0 = _x0_from_eps(s, x, d.predict(x, t), t)
            x_prev = a * x0 + b * x + sigma * eps2
            # pinned first, complement grouped so kept entries copy exactly
            x_prev = y_prev + (x_prev - mask_op.apply(x_prev))
            if round_ != rp.resample_counts - 1:
                beta = s.beta(t)
                x = np.sqrt(1.0 - beta) * x_prev + np.sqrt(beta) * eps2
            else:
                x = x_prev
    return x


def run_ilvr(
    x_ref,
    filter_op: LinearOperator,
    d: DenoiserHandle,
    s: DiffusionSchedule,
    rng: RngStream,
) -> np.ndarray:
    """Low-pass reference guidance.

    The filtered part of the state is replaced each step by the filtered,
    freshly noised reference; consistency is only approximate because the
    filter is used in place of a true pseudo-inverse.
    """
    if filter_op.in_dim != filter_op.out_dim:
        raise IncompatibleError("ilvr needs a square (state-sized) filter")
    x_ref = np.asarray(x_ref, dtype=np.float64).reshape(d.shape)
    side = rng.child(0)
    x = rng.gaussian(d.shape)
    for t in range(s.T, 0, -1):
        abar_prev = s.alpha_bar(t - 1)
        if t > 1:
            eps1 = side.gaussian(d.shape)
            eps2 = rng.gaussian(d.shape)
        else:
            eps1 = np.zeros(d.shape)
            eps2 = np.zeros(d.shape)
        y_prev = filter_op.apply(np.sqrt(abar_prev) * x_ref + np.sqrt(1.0 - abar_prev) * eps1)
        y_prev = np.asarray(y_prev).reshape(d.shape)
        x0 = _x0_from_eps(s, x, d.predict(x, t), t)
        a, b, sigma = posterior_coeffs_between(s, t, t - 1)
        x_prev = a * x0 + b * x + sigma * eps2
        x = y_prev + (x_prev - np.asarray(filter_op.apply(x_prev)).reshape(d.shape))
    return x


def run_ddrm(
    p: RestorationProblem,
    f: SvdFactors,
    d: DenoiserHandle,
    s: DiffusionSchedule,
    eta: float,
    rng: RngStream,
    trace: dict | None = None,
) -> np.ndarray:
    """Spectral-domain restoration in the operator's right-singular basis.

    The chain runs in a variance-exploding parameterization mapped from the
    schedule by sigma^ve_t = sqrt((1 - abar_t) / abar_t), with the state
    scaled by 1 / sqrt(abar_t) accordingly.  Per coordinate and step, null
    directions follow the unconditional update, noisy directions blend the
    spectral measurement in, and confident directions pin it plus fresh
    noise.  In the noise-free case the final state is exactly
    A+ y + (I - A+ A) x0_last.
    """
    if not 0.0 <= eta <= 1.0:
        raise UsageError("eta must lie in [0, 1]")
    if f.in_dim != p.op.in_dim or f.out_dim != p.op.out_dim:
        raise DimensionError("SVD factors do not match the operator")
    shape = d.shape
    dim = p.op.in_dim
    sing = f.singulars_extended()
    zero = sing <= SINGULAR_ZERO_RTOL * (sing.max() if sing.size else 0.0)
    safe = np.where(zero, 1.0, sing)

    uty = f.u.T @ np.asarray(p.y, dtype=np.float64).reshape(-1)
    ybar = np.zeros(dim)
    lead = min(f.out_dim, dim)
    ybar[:lead] = np.where(zero[:lead], 0.0, uty[:lead] / safe[:lead])

    def sigma_ve(t: int) -> float:
        abar = s.alpha_bar(t)
        return float(np.sqrt((1.0 - abar) / abar))

    u_state = rng.gaussian(shape) / np.sqrt(s.alpha_bar(s.T))
    for t in range(s.T, 0, -1):
        sig_cur = sigma_ve(t)
        sig_prev = sigma_ve(t - 1)
        x_vp = np.sqrt(s.alpha_bar(t)) * u_state
        x0 = _x0_from_eps(s, x_vp, d.predict(x_vp, t), t)
        xbar0 = f.v.T @ x0.reshape(-1)
        ubar = f.v.T @ u_state.reshape(-1)
        eps = rng.gaussian((dim,)) if t > 1 else np.zeros(dim)

        noisy = (~zero) & (sig_prev < p.sigma_y / safe)
        pinned = (~zero) & ~noisy
        new = np.empty(dim)
        new[zero] = (
            xbar0[zero]
            + np.sqrt(1.0 - eta**2) * sig_prev * (ubar[zero] - xbar0[zero]) / sig_cur
            + eta * sig_prev * eps[zero]
        )
        if np.any(noisy):
            ratio = p.sigma_y / safe[noisy]
            new[noisy] = (
                xbar0[noisy]
                + np.sqrt(1.0 - eta**2) * sig_prev * (ybar[noisy] - xbar0[noisy]) / ratio
                + eta * sig_prev * eps[noisy]
            )
        budget = np.maximum(sig_prev**2 - (p.sigma_y / safe[pinned]) ** 2, 0.0)
        new[pinned] = ybar[pinned] + np.sqrt(budget) * eps[pinned]

        u_state = (f.v @ new).reshape(shape)
        if trace is not None:
            trace["t"] = t
            trace["x0"] = x0
    return u_state
