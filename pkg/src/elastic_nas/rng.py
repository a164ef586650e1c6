"""Deterministic random-number plumbing.

Every stochastic component draws from a named sub-stream of a single 64-bit
seed, so that runs are reproducible bit-for-bit and independent components
never share a stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _name_digest(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the sub-stream `name` of `seed`.

    Same (seed, name) always yields the same stream; distinct names yield
    statistically independent streams.
    """
    return np.random.default_rng(np.random.SeedSequence([seed & _MASK64, _name_digest(name)]))


def substream_seed(seed: int, name: str) -> int:
    """A derived 64-bit integer seed for handing to components that take seeds."""
    return (seed & _MASK64) ^ _name_digest(name)


class SplitMix64:
    """The splitmix64 generator (Steele et al.), used where a fixed,
    platform-independent stream is part of a documented contract."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_unit(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_symmetric(self) -> float:
        """Uniform in [-1, 1)."""
        return 2.0 * self.next_unit() - 1.0
