"""Noise-prediction handles plugged into the samplers.

A handle maps a noisy state and time index to the estimated noise eps such
that x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.  The analytic backing
inverts the exact mixture posterior mean, so samplers can be verified
without any trained network.  The external-exchange backing shells out to a
user command for every evaluation, exchanging TEN1 files, which is how a
real pretrained denoiser can be bridged in later.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
import threading

import numpy as np

from .errors import NumericError, UsageError
from .formats import read_tensor, write_tensor
from .gmm import GmmPrior, gmm_posterior_x0
from .schedule import DiffusionSchedule


class DenoiserHandle:
    """Callable noise estimator with a declared state shape."""

    def __init__(self, fn, shape, backing: str, thread_safe: bool = True):
        self._fn = fn
        self.shape = tuple(int(d) for d in shape)
        self.backing = backing
        self._lock = None if thread_safe else threading.Lock()

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        if self._lock is None:
            eps = self._fn(x_t, t)
        else:
            with self._lock:
                eps = self._fn(x_t, t)
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != x_t.shape:
            raise NumericError(f"denoiser returned shape {eps.shape} for input {x_t.shape}")
        return eps

    def __call__(self, x_t, t):
        return self.predict(x_t, t)


def predict_noise(d: DenoiserHandle, s: DiffusionSchedule, x_t, t: int) -> np.ndarray:
    """The handle's eps estimate at time t."""
    del s  # the handle owns its schedule; kept for call-site symmetry
    return d.predict(np.asarray(x_t, dtype=np.float64), t)


def analytic_gmm_denoiser(prior: GmmPrior, s: DiffusionSchedule) -> DenoiserHandle:
    """Noise predictor induced by the exact mixture posterior mean.

    eps(x_t, t) = (x_t - sqrt(abar_t) E[x0|x_t]) / sqrt(1 - abar_t), which
    makes the clean-state reconstruction recover E[x0|x_t] exactly.
    """

    def fn(x_t, t):
        abar = s.alpha_bar(t)
        if abar >= 1.0:
            raise NumericError("noise prediction undefined at abar = 1")
        x0 = gmm_posterior_x0(prior, s, x_t, t)
        return (x_t - np.sqrt(abar) * x0) / np.sqrt(1.0 - abar)

    return DenoiserHandle(fn, prior.shape, backing="analytic-gmm")


def external_denoiser(command, shape, workdir=None) -> DenoiserHandle:
    """Bridge to a user process: `command x_t.ten t eps.ten`.

    The state is written as TEN1, the command is invoked with the input
    path, the integer time index, and the output path, and the eps estimate
    is read back.  Evaluations are serialized per handle.
    """
    command = list(command)
    if not command:
        raise UsageError("external denoiser needs a command")

    def fn(x_t, t):
        with tempfile.TemporaryDirectory(dir=workdir) as tmp:
            path_in = os.path.join(tmp, "x_t.ten")
            path_out = os.path.join(tmp, "eps.ten")
            write_tensor(path_in, x_t)
            proc = subprocess.run(
                command + [path_in, str(int(t)), path_out],
                capture_output=True,
                text=True,
            )
            if proc.returncode != 0:
                raise NumericError(
                    f"external denoiser failed ({proc.returncode}): {proc.stderr.strip()[:500]}"
                )
            return read_tensor(path_out).reshape(np.asarray(x_t).shape)

    return DenoiserHandle(fn, shape, backing="external-exchange", thread_safe=False)
