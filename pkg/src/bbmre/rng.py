"""Counter-based random streams.

Every random number drawn by the particle and environment kernels is a pure
function of a 64-bit stream id and a draw counter (SplitMix64 finalizer), so
results never depend on scheduling or on how work is chunked.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_CHILD = np.uint64(0xD1B54A32D192ED03)
_TWO53_INV = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def hash_pair(a, b):
    """Hash of an ordered pair of uint64 values."""
    a = np.uint64(a)
    b = np.uint64(b)
    return mix64(mix64(a + GOLDEN) ^ (b * _CHILD + GOLDEN))


@njit(cache=True, inline="always")
def child_stream(parent, index):
    return hash_pair(parent, np.uint64(index) + np.uint64(1))


@njit(cache=True, inline="always")
def uniform(stream, counter):
    """Uniform on the open interval (0, 1)."""
    h = mix64(np.uint64(stream) + (np.uint64(counter) + np.uint64(1)) * GOLDEN)
    return ((h >> np.uint64(11)) + 0.5) * _TWO53_INV


@njit(cache=True, inline="always")
def normal(stream, counter):
    """Standard normal from draws ``counter`` and ``counter + 1`` (Box-Muller)."""
    u1 = uniform(stream, counter)
    u2 = uniform(stream, counter + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def derive_seed(master, *tags) -> int:
    """Derive a 64-bit seed from a master seed and a tuple of tags.

    Different tag tuples give structurally separate seed families, e.g.
    ``derive_seed(s, "calibration", i)`` never shares a derivation path with
    ``derive_seed(s, "test", i)``.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(repr(tag).encode())
    return int.from_bytes(h.digest(), "little")


def seed_sequence(master, *tags) -> np.random.Generator:
    """NumPy generator for vectorized Monte Carlo keyed by (master, tags)."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, *tags)))
