"""Seeded counter-style pseudo-random numbers.

Everything random in this package flows through this generator so that
sequences, experiments and trained models are reproducible bit-for-bit,
including by re-implementations in other languages.  The full update rule:

    state_k = (seed + k * 0x9E3779B97F4A7C15) mod 2**64,   k = 1, 2, ...
    out_k   = mix64(state_k)

    mix64(z):
        z ^= z >> 30;  z = z * 0xBF58476D1CE4E5B9 mod 2**64
        z ^= z >> 27;  z = z * 0x94D049BB133111EB mod 2**64
        z ^= z >> 31

Derived draws:

    uniform:  u_k = (out_k >> 11) * 2**-53                   in [0, 1)
    normal:   consumes two uniforms (u1, u2) per value:
              sqrt(-2 * ln(1 - u1)) * cos(2 * pi * u2)

Because the state is a pure function of (seed, k), scalar and vectorised
paths produce identical streams.  Sub-streams are derived with
``derive(seed, label)`` = mix64(seed XOR fnv1a64(utf8(str(label)))).
"""

from __future__ import annotations


import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U53 = 2.0 ** -53


def mix64(z: int) -> int:
    """SplitMix64 finaliser on a 64-bit integer."""
    z &= _MASK
    z ^= z >> 30
    z = (z * _MIX1) & _MASK
    z ^= z >> 27
    z = (z * _MIX2) & _MASK
    z ^= z >> 31
    return z


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK
    return h


def derive(seed: int, *labels) -> int:
    """Derive a sub-stream seed from a root seed and one or more labels."""
    s = seed & _MASK
    for label in labels:
        s = mix64(s ^ fnv1a64(str(label).encode("utf-8")))
    return s


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based generator; see module docstring for the exact rules."""

    def __init__(self, seed: int):
        self._seed = seed & _MASK
        self._k = 0

    @property
    def seed(self) -> int:
        return self._seed

    def next_u64(self) -> int:
        self._k += 1
        return mix64((self._seed + self._k * _GOLDEN) & _MASK)

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (self.next_u64() >> 11) * _U53

    def uniform_array(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), identical to n sequential uniform() calls."""
        if n < 0:
            raise ValueError("n must be >= 0")
        ks = np.arange(self._k + 1, self._k + n + 1, dtype=np.uint64)
        self._k += n
        z = np.uint64(self._seed) + ks * np.uint64(_GOLDEN)
        return (_mix_array(z) >> np.uint64(11)).astype(np.float64) * _U53

    def normal(self) -> float:
        """One standard normal (Box-Muller; consumes two uniforms)."""
        return float(self.normal_array(1)[0])

    def normal_array(self, n: int) -> np.ndarray:
        """n standard normals, identical to n sequential normal() calls."""
        u = self.uniform_array(2 * n)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        return r * np.cos(2.0 * np.pi * u[1::2])

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, n: int) -> int:
        """Integer in [0, n) by rejection-free modular reduction on 64 bits."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def shuffled(self, n: int) -> np.ndarray:
        """A permutation of range(n) via Fisher-Yates."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
