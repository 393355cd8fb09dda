"""Portable counter-based random numbers.

Every draw is a pure function of ``(seed, counter)``:

    z = seed + (counter + 1) * 0x9E3779B97F4A7C15          (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

which is the SplitMix64 finaliser applied to a Weyl sequence.  Uniform doubles
use the top 53 bits: ``(z >> 11) * 2**-53``.  The recipe is short enough to
port to any language with 64-bit unsigned arithmetic, which keeps manifests
replayable outside Python.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def splitmix64(seed: int, counters) -> np.ndarray:
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + (counters + np.uint64(1)) * _GOLDEN
        return _mix(z)


def uniform(seed: int, size, low: float = 0.0, high: float = 1.0, offset: int = 0) -> np.ndarray:
    """``size`` doubles in ``[low, high]`` drawn from counters offset, offset+1, ..."""
    n = int(np.prod(size))
    bits = splitmix64(seed, np.arange(offset, offset + n, dtype=np.uint64))
    u = (bits >> np.uint64(11)).astype(np.float64) * (2.0**-53)
    return (low + (high - low) * u).reshape(size)


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for a (possibly nested) stream index, e.g. entry k of a run."""
    s = seed & MASK64
    for p in path:
        s = int(splitmix64(s, [p])[0])
    return s


class CounterRNG:
    """Sequential view over the counter stream; cheap to checkpoint."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & MASK64
        self.counter = counter

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        shape = () if size is None else size
        out = uniform(self.seed, shape, low, high, offset=self.counter)
        self.counter += max(int(np.prod(shape)), 1)
        return float(out) if size is None else out

    def choice(self, weights) -> int:
        w = np.asarray(weights, dtype=np.float64)
        cdf = np.cumsum(w / w.sum())
        u = self.uniform()
        return int(min(np.searchsorted(cdf, u, side="right"), len(w) - 1))
