"""Seeded randomness primitives shared by every module.

All stochastic behaviour in this package flows through one explicit PRNG so
that runs are reproducible bit-for-bit, including across reimplementations
in other languages. The generator is xoshiro256** (Blackman & Vigna), seeded
through splitmix64:

* splitmix64(state): state += 0x9E3779B97F4A7C15; z = state;
  z = (z ^ z>>30) * 0xBF58476D1CE4E5B9; z = (z ^ z>>27) * 0x94D049BB133111EB;
  output z ^ z>>31. All arithmetic mod 2**64.
* xoshiro256** state is the first four splitmix64 outputs of the seed.
* next_u64: result = rotl(s1 * 5, 7) * 9, then the standard state update.
* doubles are (next_u64() >> 11) * 2**-53, uniform in [0, 1).

Derived seeds (`derive_seed`) fold string/int labels into a parent seed via
FNV-1a 64 and one splitmix64 finalizer per part.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    """splitmix64 output function (finalizer) for a 64-bit value."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & _MASK
    return h


def derive_seed(seed: int, *parts: int | str) -> int:
    """Deterministically derive a child seed from a parent seed and labels."""
    h = seed & _MASK
    for p in parts:
        h = _mix64(h ^ fnv1a64(str(p).encode("utf-8")))
    return h


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 seeding; the package-wide PRNG."""

    __slots__ = ("_s",)

    def __init__(self, seed: int) -> None:
        s = seed & _MASK
        state = []
        for _ in range(4):
            s = (s + _GOLDEN) & _MASK
            state.append(_mix64(s))
        self._s = state

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_double(self) -> float:
        return (self.next_u64() >> 11) * 1.1102230246251565e-16  # 2**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_double()

    def below(self, n: int) -> int:
        """Integer in [0, n) via double scaling (documented, reproducible)."""
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        k = int(self.next_double() * n)
        return n - 1 if k >= n else k

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, descending index order."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def embed_token(token: str, seed: int, dim: int) -> list[float]:
    """Unit-norm pseudo-embedding of a string token.

    Entries are drawn uniform in [-1, 1) from a stream seeded by
    derive_seed(seed, "tok", token), then normalized to unit Euclidean norm.
    The same (token, seed, dim) always yields the same vector.
    """
    if dim < 1:
        raise ValueError("embedding dim must be >= 1")
    rng = Xoshiro256StarStar(derive_seed(seed, "tok", token))
    v = [2.0 * rng.next_double() - 1.0 for _ in range(dim)]
    norm = math.sqrt(sum(x * x for x in v))
    if norm < 1e-12:
        v = [0.0] * dim
        v[0] = 1.0
        return v
    return [x / norm for x in v]
