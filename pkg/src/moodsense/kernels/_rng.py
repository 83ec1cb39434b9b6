"""Counter-based splitmix64 stream shared by both kernel backends.

The k-th value is a pure function of (seed, k), so sequential scalar code
(numba) and vectorized bulk code (numpy) can consume the identical stream.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *tags: int) -> int:
    """Independent child stream seed for (seed, tag, tag, ...)."""
    s = int(seed) & MASK64
    for t in tags:
        s = mix64((s ^ mix64((int(t) & MASK64) + GOLDEN)) + GOLDEN)
    return s


def value_at(seed: int, k: int) -> int:
    """k-th uint64 of the stream (k counts from 0)."""
    return mix64((int(seed) + (k + 1) * GOLDEN) & MASK64)


def bulk_values(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Values start .. start+count-1 of the stream as a uint64 array."""
    ks = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(int(seed) & MASK64) + ks * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return z
