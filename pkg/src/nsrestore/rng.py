"""Deterministic counter-based random streams.

Every draw is a pure function of (seed, counter): a stream replays bitwise
when reconstructed with the same pair, and independent chains use disjoint
counter blocks instead of sharing mutable state.  Each draw event consumes
one counter tick and is mapped to its own 2^64-wide block of the underlying
Philox counter space, so events never overlap regardless of draw size.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, UsageError

# Child streams are spaced this far apart in counter units, so a stream may
# perform up to CHILD_STRIDE draw events without touching its siblings.
CHILD_STRIDE = 2**32

_MAX_ELEMENTS = 2**24


class RngStream:
    """A (seed, counter) random stream.

    The counter advances by one per draw event.  ``child(i)`` returns a
    stream offset by ``(i + 1) * CHILD_STRIDE`` counter ticks, which stays
    disjoint from this stream and from other children for fewer than 2^32
    draws each.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        if seed < 0 or counter < 0:
            raise UsageError("seed and counter must be nonnegative")
        self.seed = int(seed)
        self.counter = int(counter)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def child(self, index: int) -> "RngStream":
        """Derive a disjoint stream by a counter-block offset."""
        if index < 0:
            raise UsageError("child index must be nonnegative")
        return RngStream(self.seed, self.counter + (index + 1) * CHILD_STRIDE)

    def _next_generator(self) -> np.random.Generator:
        gen = np.random.Generator(
            np.random.Philox(key=self.seed, counter=self.counter << 64)
        )
        self.counter += 1
        return gen

    def gaussian(self, shape) -> np.ndarray:
        """i.i.d. standard normal draws of the given shape (one event)."""
        shape = tuple(int(d) for d in (shape if np.iterable(shape) else (shape,)))
        if len(shape) == 0 or any(d <= 0 for d in shape):
            raise DimensionError(f"cannot sample an empty shape {shape}")
        n = int(np.prod(shape))
        if n > _MAX_ELEMENTS:
            raise DimensionError(f"draw of {n} elements exceeds the {_MAX_ELEMENTS} cap")
        return self._next_generator().standard_normal(n).reshape(shape)

    def uniform(self, n: int = 1) -> np.ndarray:
        """n uniform [0, 1) draws (one event)."""
        if n <= 0 or n > _MAX_ELEMENTS:
            raise DimensionError(f"bad uniform draw size {n}")
        return self._next_generator().random(n)

    def permutation(self, n: int) -> np.ndarray:
        """A permutation of range(n) (one event)."""
        if n <= 0:
            raise DimensionError(f"bad permutation size {n}")
        return self._next_generator().permutation(n)


def gaussian_sample(rng: RngStream, shape) -> np.ndarray:
    """Standard normal tensor of the given shape, advancing the stream."""
    return rng.gaussian(shape)
