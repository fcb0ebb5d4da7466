"""Seeded random streams and small dense-matrix helpers.

Every stochastic routine in the package draws from an :class:`RngStream`.
The generator is always numpy's PCG64 (O'Neill's permuted congruential
generator, 128-bit state) seeded through :class:`numpy.random.SeedSequence`,
so a given ``(seed, stream_id)`` pair yields the same sequence on every
platform numpy supports.  Substreams are derived with ``SeedSequence``
spawn keys, which gives statistically independent, non-overlapping streams.
"""
from __future__ import annotations

import math

import numpy as np

from .exceptions import InvalidArgumentError

#: Lower clamp applied to ``|w|`` wherever a negative power of a weight appears.
EPS = 1e-8


class RngStream:
    """A reproducible stream of random draws.

    Parameters
    ----------
    seed : int
        Non-negative integer below ``2**64``.
    stream_id : tuple of int, optional
        Spawn key identifying a substream of ``seed``.  ``RngStream(s, (3,))``
        always produces the same draws, independent of how many other
        substreams were created before it.
    """

    def __init__(self, seed: int, stream_id: tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidArgumentError(f"seed must lie in [0, 2**64), got {seed}")
        self.seed = seed
        self.stream_id = tuple(int(s) for s in stream_id)
        self._seq = np.random.SeedSequence(seed, spawn_key=self.stream_id)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))
        self._n_children = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def substream(self, stream_id: int) -> "RngStream":
        """Independent child stream addressed by ``stream_id``."""
        return RngStream(self.seed, self.stream_id + (int(stream_id),))

    def spawn(self, n: int) -> list["RngStream"]:
        """``n`` fresh children, numbered after any previously spawned ones."""
        start = self._n_children
        self._n_children += n
        return [self.substream(start + i) for i in range(n)]

    # thin wrappers so callers never touch numpy's global state
    def standard_normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def normal(self, mean=0.0, std=1.0, size=None):
        return self.generator.normal(mean, std, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


def as_rng(rng) -> RngStream:
    """Coerce an int seed or an existing stream into an :class:`RngStream`."""
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        raise InvalidArgumentError("an explicit seed or RngStream is required")
    return RngStream(int(rng))


def sample_gaussian(rng: RngStream, mean: float, std: float) -> float:
    """One draw from ``N(mean, std**2)``; ``std == 0`` returns ``mean`` exactly."""
    if not math.isfinite(std) or std < 0:
        raise InvalidArgumentError(f"std must be finite and >= 0, got {std}")
    if std == 0:
        return float(mean)
    return float(mean + std * rng.standard_normal())


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit dimension check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise InvalidArgumentError(
            f"dimension mismatch: a is {a.shape[0]}x{a.shape[1]}, "
            f"b is {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def sample_var(x, axis=0) -> np.ndarray:
    """Unbiased sample variance (``ddof=1``)."""
    return np.var(x, axis=axis, ddof=1)
