"""Restoration quality metrics: PSNR, SSIM, and measurement consistency."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .operators import LinearOperator

PSNR_CAP_DB = 99.0
_MSE_FLOOR = 1e-12

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE), capped at 99 dB for vanishing MSE."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise DimensionError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse < _MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def _window_means(plane: np.ndarray, w: int) -> np.ndarray:
    """Means of all w x w windows at stride 1, via an integral image."""
    padded = np.zeros((plane.shape[0] + 1, plane.shape[1] + 1))
    padded[1:, 1:] = np.cumsum(np.cumsum(plane, axis=0), axis=1)
    sums = padded[w:, w:] - padded[:-w, w:] - padded[w:, :-w] + padded[:-w, :-w]
    return sums / (w * w)


def ssim(a, b) -> float:
    """Mean local structural similarity with 8x8 uniform windows, stride 1.

    Uses the usual stabilizers C1 = (k1 peak)^2, C2 = (k2 peak)^2 with
    k1 = 0.01, k2 = 0.03 and peak 1.  Inputs are [H,W] or [C,H,W] planes;
    channels are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise DimensionError(f"ssim needs [H,W] or [C,H,W] inputs, got {a.shape}")
    _, h, w = a.shape
    if min(h, w) < SSIM_WINDOW:
        raise DimensionError(f"image sides must be >= {SSIM_WINDOW}, got {h}x{w}")

    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    win = SSIM_WINDOW
    values = []
    for ch in range(a.shape[0]):
        pa, pb = a[ch], b[ch]
        mu_a = _window_means(pa, win)
        mu_b = _window_means(pb, win)
        var_a = _window_means(pa * pa, win) - mu_a**2
        var_b = _window_means(pb * pb, win) - mu_b**2
        cov = _window_means(pa * pb, win) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def consistency(op: LinearOperator, x0, y) -> float:
    """L1 norm of the measurement residual: sum |A x0 - y|."""
    y = np.asarray(y, dtype=np.float64)
    if y.size != op.out_dim:
        raise DimensionError(f"measurement has {y.size} entries, operator produces {op.out_dim}")
    residual = op.apply(x0) - y.reshape(op.out_shape)
    return float(np.abs(residual).sum())
