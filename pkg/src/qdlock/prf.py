"""Counter-based 64-bit pseudorandom function.

Every random phase mask and every codebook seed in this package is derived
from this one function, so results are bit-identical across platforms.

Definition (all arithmetic modulo 2**64)::

    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

    prf(key, counter) = mix64(key + (counter + 1) * 0x9E3779B97F4A7C15)

``prf(key, i)`` is therefore the ``i``-th output of a splitmix64 stream
seeded with ``key``.  Test vectors (key 0)::

    prf(0, 0) = 0xE220A8397B1DCDAF
    prf(0, 1) = 0x6E789E6AA1B965F4
    prf(0, 2) = 0x06C45D188009454F

Keys wider than 64 bits (codebook line indices can be ~100 bits) are
absorbed limb by limb with :func:`derive`.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_C1 = 0xBF58476D1CE4E5B9
_C2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _C1) & MASK64
    z = ((z ^ (z >> 27)) * _C2) & MASK64
    return z ^ (z >> 31)


def prf(key: int, counter: int) -> int:
    """Scalar PRF on Python integers."""
    return mix64((key + (counter + 1) * GOLDEN) & MASK64)


def prf_array(key: int, counters: np.ndarray) -> np.ndarray:
    """Vectorised :func:`prf` over an array of counters (returns uint64)."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key & MASK64) + (c + np.uint64(1)) * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_C1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_C2)
        z = z ^ (z >> np.uint64(31))
    return z


def derive(key: int, *words: int) -> int:
    """Fold a sequence of non-negative integers into a 64-bit seed.

    Each word is split into little-endian 64-bit limbs (at least one limb,
    so ``0`` still counts) and absorbed as ``key = prf(key, limb)``.
    """
    h = key & MASK64
    for w in words:
        if w < 0:
            raise ValueError("words must be non-negative")
        while True:
            h = prf(h, w & MASK64)
            w >>= 64
            if not w:
                break
    return h
