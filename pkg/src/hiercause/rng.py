"""Deterministic seed derivation.

Every stochastic component draws from its own numpy Generator whose seed is
derived from a root seed plus a string/integer path (node ids, iteration
numbers, ...). Deriving rather than sharing streams keeps sampling stable
under graph edits and lets independent components run in parallel.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step; good avalanche for combining seed material."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _hash_part(part: str | int) -> int:
    if isinstance(part, int):
        return part & _MASK64
    digest = hashlib.sha256(part.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(root: int, *parts: str | int) -> int:
    """Mix a root seed with a path of parts into a fresh 64-bit seed."""
    state = splitmix64(root & _MASK64)
    for part in parts:
        state = splitmix64(state ^ _hash_part(part))
    return state


def rng_for(root: int, *parts: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *parts))
