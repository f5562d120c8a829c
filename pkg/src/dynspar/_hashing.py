"""Keyed counter-based pseudorandom functions.

Every random choice in the package (bucket hashes, sign hashes, subsampling
bits, repetition picks) is a pure function of a 64-bit key and an integer
counter, so sketches are reproducible from their seed alone and never store
per-index randomness.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def derive_key(*parts: object) -> int:
    """Deterministically derive a 64-bit key from a tuple of labels."""
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def prf(key, idx) -> np.ndarray:
    """64-bit pseudorandom words for counters ``idx`` under ``key``.

    ``key`` may be a scalar or an array broadcastable against ``idx``.
    """
    idx = np.asarray(idx, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _splitmix(_splitmix(idx) ^ key)


def to_bucket(words: np.ndarray, width: int) -> np.ndarray:
    """Map words to ``[0, width)`` using the high 32 bits (multiply-shift)."""
    hi = words >> np.uint64(32)
    with np.errstate(over="ignore"):
        return ((hi * np.uint64(width)) >> np.uint64(32)).astype(np.int64)


def to_sign(words: np.ndarray) -> np.ndarray:
    """Map words to +-1.0 using the lowest bit."""
    return 1.0 - 2.0 * (words & np.uint64(1)).astype(np.float64)


def trailing_ones(words: np.ndarray) -> np.ndarray:
    """Number of consecutive 1 bits starting from bit 0 (0..64)."""
    words = np.asarray(words, dtype=np.uint64)
    with np.errstate(over="ignore"):
        lowest_zero = (~words) & (words + np.uint64(1))
    out = np.full(words.shape, 64, dtype=np.int64)
    nz = lowest_zero != 0
    # powers of two up to 2**63 are exact in float64
    out[nz] = np.log2(lowest_zero[nz].astype(np.float64)).astype(np.int64)
    return out


def uniform_int(key: int, idx, high: int) -> np.ndarray:
    """Pseudorandom integers in ``[0, high)`` for counters ``idx``."""
    return to_bucket(prf(key, idx), high)
