"""Linear degradation operators and their pseudo-inverses.

Every operator A maps R^D -> R^d and carries a pseudo-inverse A+ satisfying
A A+ A = A.  Cheap structured operators (masking, channel averaging, patch
averaging, orthonormal-row sampling) ship hand-built pseudo-inverses; dense
operators (convolutions, arbitrary matrices) derive theirs from an SVD.

A+ A projects onto the range of A and I - A+ A onto its null space, which is
the decomposition the samplers edit.  Operators are immutable after build
and safe to share across threads.

Build specs use a small grammar::

    spec := atom | "compose(" spec ("," spec)* ")"
    atom := "identity" | "zero:" INT | "grayscale" | "avgpool:" INT
          | "mask:" PATH
          | "blur:" ("gauss:"|"uniform:"|"aniso:") INT [":" REAL [":" REAL]]
          | "cs:walsh:" REAL ":" INT | "matrix:" PATH

compose(a, b, c) applies c first, then b, then a; its pseudo-inverse applies
the stage pseudo-inverses in the opposite order.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, IncompatibleError, UsageError
from .formats import read_mask, read_tensor
from .rng import RngStream
from .svd import SINGULAR_ZERO_RTOL, SvdFactors, jacobi_svd, pinv_matrix_from_svd

# Densifying an operator beyond this many matrix entries is refused.
DENSE_CAP = 2**22

MAX_COMPOSE_DEPTH = 8


def _as_shaped(x, shape, what="input"):
    arr = np.asarray(x, dtype=np.float64)
    want = int(np.prod(shape))
    if arr.size != want:
        raise DimensionError(f"{what} has {arr.size} elements, expected {want} {tuple(shape)}")
    return arr.reshape(shape)


class LinearOperator:
    """Base class; subclasses define _apply/_pinv on shaped arrays."""

    kind = "abstract"
    pinv_kind = "hand"
    tileable = False

    def __init__(self, in_shape, out_shape):
        self.in_shape = tuple(int(d) for d in in_shape)
        self.out_shape = tuple(int(d) for d in out_shape)
        self._svd_cache = None

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.out_shape))

    def __repr__(self):
        return f"<{type(self).__name__} {self.in_shape}->{self.out_shape}>"

    def apply(self, x) -> np.ndarray:
        return self._apply(_as_shaped(x, self.in_shape))

    def pinv_apply(self, y) -> np.ndarray:
        return self._pinv(_as_shaped(y, self.out_shape, "measurement"))

    def to_dense(self) -> np.ndarray:
        if self.in_dim * self.out_dim > DENSE_CAP:
            raise DimensionError(
                f"dense form of {self!r} needs {self.in_dim * self.out_dim} entries (cap {DENSE_CAP})"
            )
        cols = np.zeros((self.out_dim, self.in_dim))
        probe = np.zeros(self.in_dim)
        for j in range(self.in_dim):
            probe[j] = 1.0
            cols[:, j] = self.apply(probe).reshape(-1)
            probe[j] = 0.0
        return cols

    def svd(self) -> SvdFactors:
        if self._svd_cache is None:
            self._svd_cache = jacobi_svd(self.to_dense())
        return self._svd_cache

    def restrict_cols(self, c0: int, c1: int) -> tuple["LinearOperator", int, int]:
        """Restrict the operator to input image columns [c0, c1).

        Returns the per-tile operator and the matching output column range.
        Only structured image operators support this.
        """
        raise IncompatibleError(f"{self.kind} operator is not tileable")


class IdentityOp(LinearOperator):
    kind = "identity"
    tileable = True

    def __init__(self, shape):
        super().__init__(shape, shape)

    def _apply(self, x):
        return x.copy()

    def _pinv(self, y):
        return y.copy()

    def restrict_cols(self, c0, c1):
        if len(self.in_shape) != 3:
            raise IncompatibleError("identity is tileable only on image shapes")
        c, h, _ = self.in_shape
        return IdentityOp((c, h, c1 - c0)), c0, c1


class ZeroOp(LinearOperator):
    kind = "zero"

    def __init__(self, in_shape, out_dim):
        if out_dim <= 0:
            raise UsageError("zero operator needs a positive output size")
        super().__init__(in_shape, (out_dim,))

    def _apply(self, x):
        return np.zeros(self.out_shape)

    def _pinv(self, y):
        return np.zeros(self.in_shape)


class GrayscaleOp(LinearOperator):
    """Channel mean (r+g+b)/3; pseudo-inverse replicates the gray value."""

    kind = "grayscale"
    tileable = True

    def __init__(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != 3:
            raise DimensionError(f"grayscale needs a [3,H,W] input, got {tuple(in_shape)}")
        super().__init__(in_shape, (1, in_shape[1], in_shape[2]))

    def _apply(self, x):
        return x.mean(axis=0, keepdims=True)

    def _pinv(self, y):
        return np.broadcast_to(y, self.in_shape).copy()

    def restrict_cols(self, c0, c1):
        _, h, _ = self.in_shape
        return GrayscaleOp((3, h, c1 - c0)), c0, c1


class AvgPoolOp(LinearOperator):
    """Per-channel n x n patch mean; pseudo-inverse replicates each value."""

    kind = "avgpool"
    tileable = True

    def __init__(self, in_shape, scale):
        if scale < 1:
            raise UsageError("avgpool scale must be >= 1")
        if len(in_shape) != 3:
            raise DimensionError(f"avgpool needs a [C,H,W] input, got {tuple(in_shape)}")
        c, h, w = in_shape
        if h % scale or w % scale:
            raise DimensionError(f"avgpool:{scale} needs H and W divisible by {scale}")
        self.scale = int(scale)
        super().__init__(in_shape, (c, h // scale, w // scale))

    def _apply(self, x):
        c, h, w = self.in_shape
        n = self.scale
        return x.reshape(c, h // n, n, w // n, n).mean(axis=(2, 4))

    def _pinv(self, y):
        n = self.scale
        return np.repeat(np.repeat(y, n, axis=1), n, axis=2)

    def restrict_cols(self, c0, c1):
        n = self.scale
        if c0 % n or c1 % n:
            raise IncompatibleError(f"tile columns must align to the avgpool scale {n}")
        c, h, _ = self.in_shape
        return AvgPoolOp((c, h, c1 - c0), n), c0 // n, c1 // n


class MaskOp(LinearOperator):
    """Pixelwise keep/erase; the mask is its own pseudo-inverse (A A A = A)."""

    kind = "mask"
    tileable = True

    def __init__(self, in_shape, keep):
        keep = np.asarray(keep, dtype=bool)
        if len(in_shape) != 3:
            raise DimensionError(f"mask needs a [C,H,W] input, got {tuple(in_shape)}")
        if keep.shape != tuple(in_shape[1:]):
            raise DimensionError(
                f"mask is {keep.shape}, image plane is {tuple(in_shape[1:])}"
            )
        self.keep = keep
        super().__init__(in_shape, in_shape)

    def _apply(self, x):
        return x * self.keep

    def _pinv(self, y):
        return y * self.keep

    def restrict_cols(self, c0, c1):
        c, h, _ = self.in_shape
        return MaskOp((c, h, c1 - c0), self.keep[:, c0:c1]), c0, c1


class WalshCSOp(LinearOperator):
    """Compressed sensing with rows of the normalized Walsh-Hadamard matrix.

    ceil(ratio * D) rows are chosen by a seeded permutation.  Rows are
    orthonormal, so the adjoint is an exact pseudo-inverse.
    """

    kind = "cs:walsh"

    def __init__(self, in_shape, ratio, seed):
        dim = int(np.prod(in_shape))
        if dim & (dim - 1):
            raise DimensionError(f"walsh sampling needs a power-of-two dimension, got {dim}")
        if not 0 < ratio <= 1:
            raise UsageError(f"sampling ratio must be in (0, 1], got {ratio}")
        self.ratio = float(ratio)
        self.seed = int(seed)
        rows = math.ceil(ratio * dim)
        self.rows = RngStream(self.seed).permutation(dim)[:rows]
        super().__init__(in_shape, (rows,))

    def _apply(self, x):
        spectrum = fwht(x.reshape(-1)) / math.sqrt(self.in_dim)
        return spectrum[self.rows]

    def _pinv(self, y):
        lifted = np.zeros(self.in_dim)
        lifted[self.rows] = y
        return (fwht(lifted) / math.sqrt(self.in_dim)).reshape(self.in_shape)


class DenseOp(LinearOperator):
    """Explicit d x D matrix with an SVD-derived pseudo-inverse."""

    kind = "matrix"
    pinv_kind = "svd"

    def __init__(self, matrix, in_shape=None, pinv=None, kind=None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise DimensionError("dense operators need a 2-D matrix")
        d, big_d = matrix.shape
        if d * big_d > DENSE_CAP:
            raise DimensionError(f"dense matrix {matrix.shape} exceeds the size cap")
        if in_shape is None:
            in_shape = (big_d,)
        if int(np.prod(in_shape)) != big_d:
            raise DimensionError(f"matrix width {big_d} does not match input shape {in_shape}")
        super().__init__(in_shape, (d,))
        self.matrix = matrix
        if kind is not None:
            self.kind = kind
        if pinv is None:
            self._svd_cache = jacobi_svd(matrix)
            self.pinv = pinv_matrix_from_svd(self._svd_cache)
        else:
            self.pinv = np.asarray(pinv, dtype=np.float64)
            self.pinv_kind = "hand"
            if self.pinv.shape != (big_d, d):
                raise DimensionError("pseudo-inverse matrix has the wrong shape")

    def _apply(self, x):
        return self.matrix @ x.reshape(-1)

    def _pinv(self, y):
        return (self.pinv @ y.reshape(-1)).reshape(self.in_shape)

    def to_dense(self):
        return self.matrix.copy()


class BlurOp(LinearOperator):
    """Per-channel circular 2-D convolution, materialized densely.

    The same (H*W) x (H*W) kernel matrix acts on every channel; its SVD
    supplies the pseudo-inverse and, on request, the full operator SVD is
    assembled block-diagonally from the single-channel factors.
    """

    kind = "blur"
    pinv_kind = "svd"

    def __init__(self, in_shape, kernel):
        if len(in_shape) != 3:
            raise DimensionError(f"blur needs a [C,H,W] input, got {tuple(in_shape)}")
        c, h, w = in_shape
        if (h * w) ** 2 > DENSE_CAP:
            raise DimensionError(f"blur plane {h}x{w} exceeds the dense size cap")
        super().__init__(in_shape, in_shape)
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.plane_matrix = _circular_conv_matrix(self.kernel, h, w)
        self._plane_svd = jacobi_svd(self.plane_matrix)
        self.plane_pinv = pinv_matrix_from_svd(self._plane_svd)

    def _apply(self, x):
        c, h, w = self.in_shape
        flat = x.reshape(c, h * w)
        return (flat @ self.plane_matrix.T).reshape(self.in_shape)

    def _pinv(self, y):
        c, h, w = self.in_shape
        flat = y.reshape(c, h * w)
        return (flat @ self.plane_pinv.T).reshape(self.in_shape)

    def svd(self) -> SvdFactors:
        if self._svd_cache is None:
            self._svd_cache = _block_diag_svd(self._plane_svd, self.in_shape[0])
        return self._svd_cache


class ComposeOp(LinearOperator):
    """Chain A = A1 A2 ... An with pseudo-inverse An+ ... A1+.

    apply runs the listed operators right to left (ops[-1] first);
    pinv_apply runs their pseudo-inverses left to right (ops[0] first).
    """

    kind = "compose"

    def __init__(self, ops):
        ops = list(ops)
        if not ops:
            raise UsageError("compose needs at least one operator")
        for outer, inner in zip(ops, ops[1:]):
            if outer.in_shape != inner.out_shape:
                raise DimensionError(
                    f"compose chain break: {inner!r} feeds {outer!r}"
                )
        self.ops = ops
        super().__init__(ops[-1].in_shape, ops[0].out_shape)
        self.tileable = all(op.tileable for op in ops)

    def _apply(self, x):
        for op in reversed(self.ops):
            x = op.apply(x)
        return x

    def _pinv(self, y):
        for op in self.ops:
            y = op.pinv_apply(y)
        return y

    def restrict_cols(self, c0, c1):
        tiles = []
        lo, hi = c0, c1
        for op in reversed(self.ops):
            tile, lo, hi = op.restrict_cols(lo, hi)
            tiles.append(tile)
        return ComposeOp(list(reversed(tiles))), lo, hi


class RangeProjectorOp(LinearOperator):
    """The square projector A+ A of a base operator.

    A projector P satisfies P P P = P, so it is its own pseudo-inverse.
    Useful as the low-pass filter of reference-guided sampling.
    """

    kind = "range-projector"

    def __init__(self, base: LinearOperator):
        super().__init__(base.in_shape, base.in_shape)
        self.base = base

    def _apply(self, x):
        return self.base.pinv_apply(self.base.apply(x))

    def _pinv(self, y):
        return self._apply(y)


def fwht(vec: np.ndarray) -> np.ndarray:
    """In-order (Sylvester) fast Walsh-Hadamard transform, unnormalized."""
    a = np.array(vec, dtype=np.float64)
    n = a.size
    if n & (n - 1):
        raise DimensionError(f"fwht needs a power-of-two length, got {n}")
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        top = a[:, 0, :].copy()
        a[:, 0, :] = top + a[:, 1, :]
        a[:, 1, :] = top - a[:, 1, :]
        a = a.reshape(n)
        h *= 2
    return a


def _circular_conv_matrix(kernel, h, w):
    k = kernel.shape[0]
    if kernel.ndim != 2 or kernel.shape[1] != k:
        raise UsageError("blur kernels must be square")
    c = k // 2
    mat = np.zeros((h * w, h * w))
    for a in range(k):
        for b in range(k):
            weight = kernel[a, b]
            if weight == 0.0:
                continue
            rows = (np.arange(h)[:, None] + a - c) % h
            cols = (np.arange(w)[None, :] + b - c) % w
            src = (rows * w)[:, :] + cols  # h x w source index per target
            dst = np.arange(h * w).reshape(h, w)
            mat[dst.reshape(-1), src.reshape(-1)] += weight
    return mat


def _block_diag_svd(plane: SvdFactors, channels: int) -> SvdFactors:
    """SVD of a block-diagonal operator built from identical channel blocks."""
    m = plane.singulars.size
    hw = plane.in_dim
    tiled = np.concatenate([plane.singulars] * channels)
    blocks = np.repeat(np.arange(channels), m)
    order = np.argsort(-tiled, kind="stable")
    dim = channels * hw
    u = np.zeros((dim, dim))
    v = np.zeros((dim, dim))
    for new_idx, old_idx in enumerate(order):
        ch = blocks[old_idx]
        col = old_idx - ch * m
        u[ch * hw : (ch + 1) * hw, new_idx] = plane.u[:, col]
        v[ch * hw : (ch + 1) * hw, new_idx] = plane.v[:, col]
    return SvdFactors(u=u, singulars=tiled[order], v=v)


def blur_kernel(kind: str, size: int, width: float | None, width2: float | None) -> np.ndarray:
    """Normalized square blur kernels: gaussian, uniform, or anisotropic."""
    if size < 1 or size % 2 == 0:
        raise UsageError(f"blur kernel size must be odd and positive, got {size}")
    offsets = np.arange(size) - size // 2
    if kind == "uniform":
        kern = np.ones((size, size))
    elif kind == "gauss":
        if width is None or width <= 0:
            raise UsageError("gaussian blur needs a positive width")
        g = np.exp(-(offsets**2) / (2.0 * width**2))
        kern = np.outer(g, g)
    elif kind == "aniso":
        if width is None or width2 is None or width <= 0 or width2 <= 0:
            raise UsageError("anisotropic blur needs two positive widths")
        gy = np.exp(-(offsets**2) / (2.0 * width**2))
        gx = np.exp(-(offsets**2) / (2.0 * width2**2))
        kern = np.outer(gy, gx)
    else:
        raise UsageError(f"unknown blur kind {kind!r}")
    return kern / kern.sum()


# ---------------------------------------------------------------------------
# spec grammar


def _split_top_level(text: str) -> list[str]:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise UsageError(f"unbalanced parentheses in {text!r}")
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    if depth != 0:
        raise UsageError(f"unbalanced parentheses in {text!r}")
    parts.append(text[start:])
    return parts


def _build_atom(text: str, in_shape) -> LinearOperator:
    head, _, rest = text.partition(":")
    if head == "identity" and not rest:
        return IdentityOp(in_shape)
    if head == "zero":
        return ZeroOp(in_shape, _parse_int(rest, text))
    if head == "grayscale" and not rest:
        return GrayscaleOp(in_shape)
    if head == "avgpool":
        return AvgPoolOp(in_shape, _parse_int(rest, text))
    if head == "mask":
        if not rest:
            raise UsageError(f"mask needs a PGM path in {text!r}")
        return MaskOp(in_shape, read_mask(rest))
    if head == "blur":
        fields = rest.split(":")
        if len(fields) < 2:
            raise UsageError(f"blur spec too short in {text!r}")
        kind = fields[0]
        size = _parse_int(fields[1], text)
        width = _parse_real(fields[2], text) if len(fields) > 2 else None
        width2 = _parse_real(fields[3], text) if len(fields) > 3 else None
        return BlurOp(in_shape, blur_kernel(kind, size, width, width2))
    if head == "cs":
        fields = rest.split(":")
        if len(fields) != 3 or fields[0] != "walsh":
            raise UsageError(f"compressed sensing spec must be cs:walsh:RATIO:SEED, got {text!r}")
        return WalshCSOp(in_shape, _parse_real(fields[1], text), _parse_int(fields[2], text))
    if head == "matrix":
        if not rest:
            raise UsageError(f"matrix needs a TEN1 path in {text!r}")
        mat = read_tensor(rest)
        if mat.ndim != 2:
            raise DimensionError(f"matrix file {rest} must hold a [d, D] tensor")
        return DenseOp(mat, in_shape=in_shape)
    raise UsageError(f"unknown operator spec {text!r}")


def _parse_int(token: str, context: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise UsageError(f"expected an integer in {context!r}, got {token!r}") from None


def _parse_real(token: str, context: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise UsageError(f"expected a number in {context!r}, got {token!r}") from None


def build_operator(spec: str, in_shape, _depth: int = 0) -> LinearOperator:
    """Build an operator from its grammar string for a given input shape."""
    text = spec.strip()
    if _depth > MAX_COMPOSE_DEPTH:
        raise UsageError(f"compose nesting deeper than {MAX_COMPOSE_DEPTH}")
    if text.startswith("compose(") and text.endswith(")"):
        inner = _split_top_level(text[len("compose(") : -1])
        # innermost (last) stage sees the caller's input shape; each earlier
        # stage sees its successor's output shape
        ops_reversed = []
        shape = tuple(in_shape)
        for part in reversed(inner):
            op = build_operator(part, shape, _depth + 1)
            ops_reversed.append(op)
            shape = op.out_shape
        return ComposeOp(list(reversed(ops_reversed)))
    return _build_atom(text, tuple(in_shape))


# ---------------------------------------------------------------------------
# functional surface


def apply(op: LinearOperator, x) -> np.ndarray:
    return op.apply(x)


def pinv_apply(op: LinearOperator, y) -> np.ndarray:
    return op.pinv_apply(y)


def range_project(op: LinearOperator, x) -> np.ndarray:
    """A+ A x: the part of x determined by the measurement."""
    return op.pinv_apply(op.apply(x))


def null_project(op: LinearOperator, x) -> np.ndarray:
    """(I - A+ A) x: the part of x invisible to the operator."""
    x = _as_shaped(x, op.in_shape)
    return x - range_project(op, x)


def compose(ops) -> LinearOperator:
    return ComposeOp(ops)


def projector(op: LinearOperator) -> RangeProjectorOp:
    return RangeProjectorOp(op)


def svd_of(op: LinearOperator) -> SvdFactors:
    return op.svd()


def pinv_from_svd(factors: SvdFactors, threshold: float = SINGULAR_ZERO_RTOL) -> DenseOp:
    """Wrap V S+ U^T as an explicit operator from R^d to R^D."""
    mat = pinv_matrix_from_svd(factors, threshold)
    return DenseOp(mat, kind="pinv")


def verify_pinv(op: LinearOperator, probes: int, rng: RngStream) -> dict:
    """Probe the defining identities of the attached pseudo-inverse.

    Reports the max-norm residuals of A A+ A x vs A x and of A applied to
    the null-space projection, over random gaussian probes.
    """
    if probes < 1:
        raise UsageError("need at least one probe")
    worst_pinv = 0.0
    worst_null = 0.0
    for _ in range(probes):
        x = rng.gaussian(op.in_shape)
        ax = op.apply(x)
        residual = op.apply(op.pinv_apply(ax)) - ax
        worst_pinv = max(worst_pinv, float(np.abs(residual).max()))
        leak = op.apply(null_project(op, x))
        worst_null = max(worst_null, float(np.abs(leak).max()))
    return {
        "probes": probes,
        "max_pinv_residual": worst_pinv,
        "max_null_residual": worst_null,
    }
