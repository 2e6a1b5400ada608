"""Deterministic pseudo-randomness for every seeded draw in the harness.

The generator is SplitMix64: a single 64-bit state, no tables, and an exact
published update rule, so task files, distractor samples, and line keys are
reproducible from a seed in any language. All distribution helpers (ranges,
shuffles, sampling without replacement) live here so the draw-consumption
order is pinned by this module rather than by interpreter internals.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

ALGORITHM = "splitmix64"


class SplitMix64:
    """64-bit SplitMix generator with bias-free integer helpers."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), modulo bias removed by rejection."""
        if n <= 0:
            raise ValueError(f"below() requires n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            value = self.next_u64()
            if value < limit:
                return value % n

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.below(hi - lo + 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, seq):
        if not seq:
            raise ValueError("choice() on empty sequence")
        return seq[self.below(len(seq))]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), via partial Fisher-Yates."""
        if k > n:
            raise ValueError(f"cannot sample {k} distinct indices from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def derive_seed(base: int, *labels) -> int:
    """Stable 64-bit sub-seed for a named stream.

    Hashes the base seed together with the labels so independent draw
    streams (distractor sampling, line keys, subset selection, ...) never
    share state even when they start from the same run seed.
    """
    material = "|".join([str(base & _MASK64), *[str(part) for part in labels]])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
