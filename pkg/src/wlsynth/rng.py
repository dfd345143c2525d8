"""Seeded splitmix64 stream used for every random choice in the pipeline.

Python's ``random`` module would also be deterministic, but the exact
draw sequence is an implementation detail of CPython.  A hand-rolled
splitmix64 keeps generated workloads stable across interpreter versions.
"""

from __future__ import annotations

import hashlib
from typing import Sequence, TypeVar

T = TypeVar("T")

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """The splitmix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash64(text: str) -> int:
    """Stable 64-bit hash of a string (``hash()`` is salted per process)."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    @classmethod
    def for_user(cls, global_seed: int, user_id: str) -> "SplitMix64":
        return cls(mix64((global_seed & MASK64) ^ hash64(user_id)))

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        return self.next_u64() % n

    def choice(self, items: Sequence[T]) -> T:
        # Callers pass candidates already sorted by id.
        return items[self.below(len(items))]

    def random(self) -> float:
        return (self.next_u64() >> 11) / float(1 << 53)

    def sample(self, items: Sequence[T], k: int) -> list[T]:
        """k distinct items, partial Fisher-Yates over a copy."""
        pool = list(items)
        if k > len(pool):
            raise ValueError("sample larger than population")
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
