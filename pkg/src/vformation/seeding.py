"""Deterministic seed splitting.

Every random stream in the package is derived from a master seed and a
tuple of integer keys (run index, clone index, level, ...) with a
splitmix64-style mix, so results never depend on scheduling order.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Mix ``master`` with ``keys`` into a new unsigned 64-bit seed.

    ``derive_seed(s, a, b)`` equals ``derive_seed(derive_seed(s, a), b)``.
    """
    z = int(master) & _MASK
    for key in keys:
        z = _splitmix64(z ^ _splitmix64(int(key) & _MASK))
    return z


def make_rng(master: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
