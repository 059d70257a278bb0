"""Exact and visual tensor file formats.

TEN1 is a plain-text container that round-trips IEEE doubles bitwise:

    TEN1
    dims d1 d2 ...
    v1 v2 v3 ...          (row-major, 17 significant digits)

PGM (P5) and PPM (P6) are the binary netpbm formats with maxval 255, used
for eyeballing results.  Images are [1,H,W] or [3,H,W] tensors with values
in [0, peak]; quantization to 8 bits loses at most 1/255 per pixel.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import DimensionError, FormatError


def format_value(v: float) -> str:
    return format(float(v), ".17g")


def write_tensor(path, tensor: np.ndarray) -> None:
    """Write a tensor as TEN1 text. Values must be finite."""
    arr = np.asarray(tensor, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FormatError("refusing to write non-finite values")
    dims = " ".join(str(d) for d in arr.shape) if arr.ndim else "1"
    flat = arr.reshape(-1)
    lines = ["TEN1", f"dims {dims}"]
    # 8 values per line keeps the files diffable without bloating them
    for i in range(0, flat.size, 8):
        lines.append(" ".join(format_value(v) for v in flat[i : i + 8]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_tensor(path) -> np.ndarray:
    """Read a TEN1 file back into a float64 array."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "TEN1":
        raise FormatError("missing TEN1 magic", line=1)
    if len(lines) < 2 or not lines[1].startswith("dims"):
        raise FormatError("missing dims header", line=2)
    try:
        dims = tuple(int(tok) for tok in lines[1].split()[1:])
    except ValueError as exc:
        raise FormatError(f"bad dimension token ({exc})", line=2) from None
    if not dims or any(d <= 0 for d in dims):
        raise FormatError(f"bad dims {dims}", line=2)
    expected = math.prod(dims)
    values = []
    for lineno, line in enumerate(lines[2:], start=3):
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise FormatError(f"non-numeric token {tok!r}", line=lineno) from None
    if len(values) != expected:
        raise FormatError(
            f"dims {dims} need {expected} values, found {len(values)}",
            line=len(lines),
        )
    return np.array(values, dtype=np.float64).reshape(dims)


def tensor_io(path, tensor: np.ndarray | None = None) -> np.ndarray | None:
    """Write when a tensor is given, otherwise read."""
    if tensor is None:
        return read_tensor(path)
    write_tensor(path, tensor)
    return None


def _read_netpbm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, width, height, maxval separated by whitespace/comments
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise FormatError("truncated netpbm header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    magic = tokens[0].decode("ascii")
    if magic not in ("P5", "P6"):
        raise FormatError(f"unsupported netpbm magic {magic!r}", line=1)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise FormatError("non-numeric netpbm header field", line=1) from None
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    i += 1  # single whitespace byte after maxval
    channels = 1 if magic == "P5" else 3
    need = width * height * channels
    raster = data[i : i + need]
    if len(raster) != need:
        raise FormatError(f"truncated raster: need {need} bytes, have {len(raster)}")
    return magic, width, height, channels, np.frombuffer(raster, dtype=np.uint8)


def read_image(path) -> np.ndarray:
    """Read a PGM/PPM file into a [C,H,W] tensor with values in [0, 1]."""
    _, width, height, channels, raster = _read_netpbm(path)
    img = raster.astype(np.float64) / 255.0
    img = img.reshape(height, width, channels)
    return np.ascontiguousarray(np.transpose(img, (2, 0, 1)))


def write_image(path, tensor: np.ndarray, peak: float = 1.0) -> None:
    """Write a [1,H,W] tensor as PGM or a [3,H,W] tensor as PPM.

    Values are clamped to [0, peak] and scaled so that peak maps to 255.
    """
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise DimensionError(f"image tensors must be [1,H,W] or [3,H,W], got {arr.shape}")
    if peak <= 0:
        raise DimensionError("peak must be positive")
    channels, height, width = arr.shape
    clamped = np.clip(arr, 0.0, peak)
    bytes_ = np.rint(clamped / peak * 255.0).astype(np.uint8)
    magic = b"P5" if channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (width, height)
    raster = np.transpose(bytes_, (1, 2, 0)).tobytes()
    with open(path, "wb") as fh:
        fh.write(header + raster)


def image_io(path, tensor: np.ndarray | None = None, peak: float = 1.0):
    """Write when a tensor is given, otherwise read."""
    if tensor is None:
        return read_image(path)
    write_image(path, tensor, peak)
    return None


def read_mask(path) -> np.ndarray:
    """Read a PGM mask: byte >= 128 means kept, below means erased."""
    magic, width, height, channels, raster = _read_netpbm(path)
    if channels != 1:
        raise FormatError("masks must be single-channel PGM")
    return (raster.reshape(height, width) >= 128)


def write_mask(path, keep: np.ndarray) -> None:
    """Write a boolean [H,W] keep-map as a PGM mask (255 kept, 0 erased)."""
    keep = np.asarray(keep, dtype=bool)
    if keep.ndim != 2:
        raise DimensionError("masks must be 2-D [H,W]")
    write_image(path, keep[None, :, :].astype(np.float64), peak=1.0)


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if parent and not os.path.isdir(parent):
        raise FormatError(f"parent directory does not exist: {parent}")
