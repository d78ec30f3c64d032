"""Deterministic random numbers: SplitMix64 seeding, xoshiro256++ streams,
Box-Muller normals.

Every random tensor in sterf comes from here so that a ``(shape, seed)``
pair fully determines the values, independent of numpy's global state or
version.

Seeding scheme
--------------
* ``Xoshiro256pp(seed)`` fills its four state words with the first four
  outputs of ``SplitMix64(seed)``.
* ``stream_seed(seed, key)`` is the ``key``-th (0-based) output of
  ``SplitMix64(seed)``; it names an independent sub-stream.
* ``name_key(name)`` hashes a string with 64-bit FNV-1a so parameter
  streams can be addressed by name.

Normals
-------
Raw words are consumed in pairs ``(a, b)``::

    u1 = ((a >> 11) + 1) * 2**-53      # in (0, 1]
    u2 = (b >> 11) * 2**-53            # in [0, 1)
    z0 = sqrt(-2 ln u1) * cos(2 pi u2)
    z1 = sqrt(-2 ln u1) * sin(2 pi u2)

and emitted in the order z0, z1, z0', z1', ... (row-major fill).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix64(self.state)


class Xoshiro256pp:
    """xoshiro256++ 1.0 (Blackman & Vigna)."""

    def __init__(self, seed: int | None = None, state: tuple[int, int, int, int] | None = None):
        if state is None:
            if seed is None:
                raise ValueError("either seed or state is required")
            sm = SplitMix64(seed)
            state = (sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64())
        if not any(state):
            raise ValueError("xoshiro256++ state must not be all zero")
        self.s = [w & MASK64 for w in state]

    def next_u64(self) -> int:
        return self.random_raw(1)[0]

    def random_raw(self, n: int) -> list[int]:
        s0, s1, s2, s3 = self.s
        m = MASK64
        out = [0] * n
        for i in range(n):
            x = (s0 + s3) & m
            out[i] = ((((x << 23) | (x >> 41)) & m) + s0) & m
            t = (s1 << 17) & m
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & m
        self.s = [s0, s1, s2, s3]
        return out

    def standard_normal(self, n: int) -> np.ndarray:
        raw = np.array(self.random_raw(2 * ((n + 1) // 2)), dtype=np.uint64)
        a = raw[0::2] >> np.uint64(11)
        b = raw[1::2] >> np.uint64(11)
        u1 = (a.astype(np.float64) + 1.0) * 2.0**-53
        u2 = b.astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * len(a), dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]


def stream_seed(seed: int, key: int) -> int:
    """The ``key``-th output of SplitMix64 seeded at ``seed``."""
    return _mix64((seed + (key + 1) * GOLDEN_GAMMA) & MASK64)


def name_key(name: str) -> int:
    h = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def randn(shape: tuple[int, ...], seed: int) -> np.ndarray:
    """i.i.d. N(0, 1) samples of the given shape, fully determined by ``seed``."""
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    n = math.prod(shape)
    return Xoshiro256pp(seed).standard_normal(n).reshape(shape)
