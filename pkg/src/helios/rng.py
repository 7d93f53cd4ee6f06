"""Deterministic random-number streams.

Built on NumPy's Philox counter-based bit generator, whose output stream
is fixed by NumPy's bit-generator compatibility guarantee: the same
128-bit key yields the same draws on every platform and NumPy release.
The key is assembled from a 64-bit seed (low word) and a 64-bit stream
id (high word), so distinct stream ids give statistically independent
sequences under the same seed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class RngStream:
    """One independent, reproducible stream keyed by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = (self.stream_id << 64) | self.seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream_id: int) -> "RngStream":
        """Fresh stream with the same seed and a new stream id."""
        return RngStream(self.seed, stream_id)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, mean: float = 0.0, std: float = 1.0, shape=None) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def bernoulli(self, p: float, shape=None) -> np.ndarray:
        """0/1 draws as float64, P(1) = p."""
        return (self._gen.random(size=shape) < p).astype(np.float64)

    def integers(self, low: int, high: int, shape=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
