"""Isotropic Gaussian-mixture priors and their exact posterior means.

A mixture with weights w_k, means mu_k and isotropic scales s_k admits a
closed form for E[x0 | x_t] under the forward model
x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps:

    v_k   = abar_t s_k^2 + 1 - abar_t                  (marginal variance)
    r_k  ~= w_k N(x_t; sqrt(abar_t) mu_k, v_k I)       (responsibility)
    m_k   = mu_k + (s_k^2 sqrt(abar_t) / v_k) (x_t - sqrt(abar_t) mu_k)
    E[x0 | x_t] = sum_k r_k m_k

Responsibilities are always computed in the log domain: likelihood logs of
distant components differ by hundreds and would underflow otherwise.

This posterior mean is what a perfectly trained denoising network would
output, so it stands in for one at desk scale.  A self-normalized
importance-sampling estimator doubles as an independent cross-check.

GMM1 file format::

    GMM1
    dim D components K
    w_1
    mu_1 ... (D values)
    s_1
    ...repeated for each component
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError, UsageError
from .formats import format_value
from .rng import RngStream
from .schedule import DiffusionSchedule

_ESS_FLOOR = 10.0
_DRAW_CAP = 2**24


@dataclass(frozen=True)
class GmmPrior:
    weights: np.ndarray  # (K,), nonnegative, sums to 1
    means: np.ndarray  # (K, D)
    scales: np.ndarray  # (K,), nonnegative
    shape: tuple = field(default=())  # optional image shape with prod == D

    def __post_init__(self):
        w, m, s = self.weights, self.means, self.scales
        if m.ndim != 2 or w.shape != (m.shape[0],) or s.shape != (m.shape[0],):
            raise UsageError("inconsistent mixture arrays")
        if np.any(w < 0) or np.any(s < 0):
            raise UsageError("weights and scales must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise UsageError(f"weights sum to {w.sum()}, expected 1")
        if not self.shape:
            object.__setattr__(self, "shape", (m.shape[1],))
        elif int(np.prod(self.shape)) != m.shape[1]:
            raise UsageError(f"shape {self.shape} does not match dim {m.shape[1]}")

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means


def make_prior(weights, means, scales, shape=()) -> GmmPrior:
    return GmmPrior(
        weights=np.asarray(weights, dtype=np.float64),
        means=np.asarray(means, dtype=np.float64),
        scales=np.asarray(scales, dtype=np.float64),
        shape=tuple(shape),
    )


def gmm_sample(prior: GmmPrior, rng: RngStream) -> np.ndarray:
    """One draw: pick a component by weight, then sample N(mu_k, s_k^2 I)."""
    u = rng.uniform(1)[0]
    k = int(np.searchsorted(np.cumsum(prior.weights), u, side="right"))
    k = min(k, prior.K - 1)
    eps = rng.gaussian((prior.dim,))
    return prior.means[k] + prior.scales[k] * eps


def _log_responsibilities(prior: GmmPrior, abar: float, x_flat: np.ndarray):
    root = np.sqrt(abar)
    var = abar * prior.scales**2 + (1.0 - abar)  # (K,)
    diff = x_flat[None, :] - root * prior.means  # (K, D)
    sq = np.einsum("kd,kd->k", diff, diff)
    logw = np.log(np.maximum(prior.weights, 1e-300))
    logp = logw - 0.5 * prior.dim * np.log(2.0 * np.pi * var) - 0.5 * sq / var
    logp -= logp.max()
    p = np.exp(logp)
    return p / p.sum(), var, diff


def gmm_responsibilities(prior: GmmPrior, s: DiffusionSchedule, x_t, t: int) -> np.ndarray:
    """Posterior component probabilities given the noisy state."""
    x_flat = np.asarray(x_t, dtype=np.float64).reshape(-1)
    resp, _, _ = _log_responsibilities(prior, s.alpha_bar(t), x_flat)
    return resp


def gmm_posterior_x0(prior: GmmPrior, s: DiffusionSchedule, x_t, t: int) -> np.ndarray:
    """Exact E[x0 | x_t] under the forward noising model."""
    x_arr = np.asarray(x_t, dtype=np.float64)
    x_flat = x_arr.reshape(-1)
    if x_flat.size != prior.dim:
        raise UsageError(f"state has {x_flat.size} entries, prior dim is {prior.dim}")
    abar = s.alpha_bar(t)
    resp, var, diff = _log_responsibilities(prior, abar, x_flat)
    shrink = (prior.scales**2) * np.sqrt(abar) / var  # (K,)
    comp_means = prior.means + shrink[:, None] * diff  # (K, D)
    return (resp @ comp_means).reshape(x_arr.shape)


def mc_posterior_x0(
    prior: GmmPrior,
    s: DiffusionSchedule,
    x_t,
    t: int,
    n: int,
    rng: RngStream,
):
    """Self-normalized importance estimate of E[x0 | x_t] plus its stderr.

    Draws x0 from the prior and weights each draw by the forward likelihood
    N(x_t; sqrt(abar_t) x0, (1 - abar_t) I).  Raises NumericError when the
    effective sample size collapses below 10 (x_t too deep in the tails).
    """
    if n < 1000:
        raise UsageError(f"need n >= 1000 draws, got {n}")
    x_arr = np.asarray(x_t, dtype=np.float64)
    x_flat = x_arr.reshape(-1)
    dim = prior.dim
    if x_flat.size != dim:
        raise UsageError(f"state has {x_flat.size} entries, prior dim is {dim}")
    abar = s.alpha_bar(t)
    if abar >= 1.0:
        raise NumericError("forward likelihood is degenerate at abar = 1")
    root = np.sqrt(abar)
    noise_var = 1.0 - abar

    chunk = max(1, min(n, _DRAW_CAP // max(dim, 1)))
    # sums are accumulated around the prior mean so the variance formula
    # does not cancel catastrophically, and rescaled against the largest
    # log-weight seen so far
    center = prior.mean()
    log_max = -np.inf
    sum_w = 0.0
    sum_w2 = 0.0
    sum_wdx = np.zeros(dim)
    sum_w2dx = np.zeros(dim)
    sum_w2dx2 = np.zeros(dim)

    cum_w = np.cumsum(prior.weights)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        u = rng.uniform(m)
        ks = np.minimum(np.searchsorted(cum_w, u, side="right"), prior.K - 1)
        draws = prior.means[ks] + prior.scales[ks, None] * rng.gaussian((m, dim))
        resid = x_flat[None, :] - root * draws
        logw = -0.5 * np.einsum("nd,nd->n", resid, resid) / noise_var
        new_max = max(log_max, float(logw.max()))
        if new_max > log_max and np.isfinite(log_max):
            scale = np.exp(log_max - new_max)
            sum_w *= scale
            sum_wdx *= scale
            sum_w2 *= scale * scale
            sum_w2dx *= scale * scale
            sum_w2dx2 *= scale * scale
        log_max = new_max
        w = np.exp(logw - log_max)
        dx = draws - center
        sum_w += w.sum()
        sum_w2 += (w * w).sum()
        sum_wdx += w @ dx
        sum_w2dx += (w * w) @ dx
        sum_w2dx2 += (w * w) @ (dx * dx)
        done += m

    if sum_w <= 0.0:
        raise NumericError("all importance weights underflowed")
    ess = sum_w * sum_w / sum_w2
    if ess < _ESS_FLOOR:
        raise NumericError(f"effective sample size {ess:.2f} below {_ESS_FLOOR}; state too far in the tails")
    delta = sum_wdx / sum_w
    mean = center + delta
    var = (sum_w2dx2 - 2.0 * delta * sum_w2dx + delta * delta * sum_w2) / (sum_w * sum_w)
    stderr = np.sqrt(np.maximum(var, 0.0))
    return mean.reshape(x_arr.shape), stderr.reshape(x_arr.shape)


# ---------------------------------------------------------------------------
# image-pattern priors


def image_pattern_prior(shape, patterns: int, scale: float = 0.05, seed: int = 0) -> GmmPrior:
    """A mixture of simple image motifs: flat colors, gradients, checkers.

    Gives toy restorations visually checkable structure; all components
    share one isotropic scale.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) != 3:
        raise UsageError(f"image priors need a [C,H,W] shape, got {shape}")
    if patterns < 1:
        raise UsageError("need at least one pattern")
    if scale < 0:
        raise UsageError("scale must be nonnegative")
    c, h, w = shape
    rng = RngStream(seed)

    def color():
        return 0.15 + 0.7 * rng.uniform(c)

    ys = np.linspace(0.0, 1.0, h)[None, :, None]
    xs = np.linspace(0.0, 1.0, w)[None, None, :]
    means = []
    for k in range(patterns):
        c0 = color()[:, None, None]
        c1 = color()[:, None, None]
        motif = k % 5
        if motif == 0:
            img = np.broadcast_to(c0, shape).copy()
        elif motif == 1:
            img = c0 + (c1 - c0) * np.broadcast_to(xs, shape)
        elif motif == 2:
            img = c0 + (c1 - c0) * np.broadcast_to(ys, shape)
        elif motif == 3:
            cell = max(1, min(h, w) // 4)
            grid = ((np.arange(h)[:, None] // cell + np.arange(w)[None, :] // cell) % 2)
            img = np.where(grid[None, :, :] == 0, c0, c1)
        else:
            img = c0 + (c1 - c0) * np.broadcast_to((xs + ys) / 2.0, shape)
        means.append(img.reshape(-1))
    weights = np.full(patterns, 1.0 / patterns)
    scales = np.full(patterns, float(scale))
    return GmmPrior(weights=weights, means=np.array(means), scales=scales, shape=shape)


# ---------------------------------------------------------------------------
# GMM1 files


def write_prior(path, prior: GmmPrior) -> None:
    lines = ["GMM1", f"dim {prior.dim} components {prior.K}"]
    for k in range(prior.K):
        lines.append(format_value(prior.weights[k]))
        mean = prior.means[k]
        for i in range(0, mean.size, 8):
            lines.append(" ".join(format_value(v) for v in mean[i : i + 8]))
        lines.append(format_value(prior.scales[k]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_prior(path, shape=()) -> GmmPrior:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "GMM1":
        raise FormatError("missing GMM1 magic", line=1)
    header = lines[1].split() if len(lines) > 1 else []
    if len(header) != 4 or header[0] != "dim" or header[2] != "components":
        raise FormatError("header must read 'dim D components K'", line=2)
    try:
        dim, k = int(header[1]), int(header[3])
    except ValueError:
        raise FormatError("non-integer header field", line=2) from None
    tokens = " ".join(lines[2:]).split()
    expected = k * (dim + 2)
    if len(tokens) != expected:
        raise FormatError(f"expected {expected} values for K={k}, D={dim}, found {len(tokens)}")
    try:
        vals = np.array([float(tok) for tok in tokens])
    except ValueError as exc:
        raise FormatError(f"non-numeric token ({exc})") from None
    vals = vals.reshape(k, dim + 2)
    return make_prior(vals[:, 0], vals[:, 1 : dim + 1], vals[:, dim + 1], shape=shape)
