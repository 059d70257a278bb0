"""Shifted-window restoration for outputs wider than the sampler's native size.

The target width is covered by overlapping tiles.  Tiles run left to right;
inside every tile's reverse loop, the columns shared with already-finished
output are overwritten in each clean estimate, last step included, so
adjacent tiles agree bitwise on their overlap and no seams appear.

A width that the stride does not divide is handled by right-aligning the
final tile (growing its overlap); alternatively the plan can round the
width up ("pad" alignment), in which case the operator and measurement are
built at the padded width and the result is cropped.  For 2-D enlargement,
run a horizontal pass first, then the same machinery vertically on the
transposed problem.

Pinning always uses the full-precision neighbor values, not a quantized
copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserHandle
from .errors import DimensionError, IncompatibleError, UsageError
from .rng import RngStream
from .sampler import RestorationProblem, SamplerParams, _reverse_chain
from .schedule import DiffusionSchedule


@dataclass(frozen=True)
class TileSegment:
    start: int  # first output column covered by this tile
    stop: int  # one past the last covered column
    fresh: int  # first column NOT pinned from the previous tile

    @property
    def pin_width(self) -> int:
        return self.fresh - self.start


@dataclass(frozen=True)
class TilePlan:
    tile: int
    shift: int
    width: int  # planned (possibly padded) width
    crop: int  # caller-visible width after cropping
    segments: tuple[TileSegment, ...]


def plan_tiles(target_shape, tile: int, shift: int, align: str = "right") -> TilePlan:
    """Cover the target width with `tile`-wide windows every `shift` columns."""
    width = int(target_shape[-1])
    if shift > tile or shift < 1:
        raise UsageError(f"need 1 <= shift <= tile, got shift={shift}, tile={tile}")
    if width < tile:
        raise UsageError(f"target width {width} is below the tile width {tile}")
    if align not in ("right", "pad"):
        raise UsageError(f"unknown alignment {align!r}")

    crop = width
    if align == "pad" and (width - tile) % shift:
        width += shift - (width - tile) % shift

    starts = list(range(0, width - tile + 1, shift))
    if starts[-1] + tile < width:
        starts.append(width - tile)  # right-align the final tile

    segments = []
    covered = 0
    for start in starts:
        segments.append(TileSegment(start=start, stop=start + tile, fresh=covered))
        covered = start + tile
    return TilePlan(tile=tile, shift=shift, width=width, crop=crop, segments=tuple(segments))


def run_mask_shift(
    p: RestorationProblem,
    d: DenoiserHandle,
    s: DiffusionSchedule,
    sp: SamplerParams,
    plan: TilePlan,
    trace: dict | None = None,
) -> np.ndarray:
    """Restore a wide target tile by tile with exact seam coherence.

    The operator in `p` must be built for the full planned width and be
    column-restrictable (masking, channel or patch averaging, and their
    composites); the denoiser runs at the native tile width.  All tiles
    consume one stream sequentially, so a single-tile plan reproduces the
    plain restoration loop bitwise.
    """
    op = p.op
    if len(op.in_shape) != 3:
        raise IncompatibleError("tiled restoration needs an image-shaped operator")
    channels, height, width = op.in_shape
    if width != plan.width:
        raise DimensionError(f"operator width {width} does not match the plan width {plan.width}")
    if tuple(d.shape) != (channels, height, plan.tile):
        raise DimensionError(
            f"denoiser shape {d.shape} does not match the tile shape {(channels, height, plan.tile)}"
        )
    y = np.asarray(p.y, dtype=np.float64).reshape(op.out_shape)
    if y.ndim != 3:
        raise IncompatibleError("tiled restoration needs an image-shaped measurement")

    rng = RngStream(sp.seed)
    out = np.zeros((channels, height, plan.width))
    seg_outputs = []
    for seg in plan.segments:
        tile_op, y0, y1 = op.restrict_cols(seg.start, seg.stop)
        y_seg = y[..., y0:y1]
        if seg.pin_width > 0:
            pinned = out[..., seg.start : seg.fresh].copy()

            def pin(x0hat, _pinned=pinned, _w=seg.pin_width):
                x0hat = x0hat.copy()
                x0hat[..., :_w] = _pinned
                return x0hat

        else:
            pin = None
        x_seg = _reverse_chain(
            d,
            s,
            rng,
            steps=sp.steps,
            mode=sp.mode,
            eta=sp.eta,
            op=tile_op,
            y=y_seg,
            sigma_y=0.0,
            pin=pin,
        )
        seg_outputs.append(x_seg)
        local_fresh = seg.fresh - seg.start
        out[..., seg.fresh : seg.stop] = x_seg[..., local_fresh:]
    if trace is not None:
        trace["segments"] = seg_outputs
    return out[..., : plan.crop]
