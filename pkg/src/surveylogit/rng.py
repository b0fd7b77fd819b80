"""Deterministic generator streams derived from a master seed.

Every stream is a ``numpy.random.SeedSequence`` whose spawn key extends the
parent's, e.g. replicate ``r`` of master seed ``s`` is
``SeedSequence(s, spawn_key=(r,))`` and stratum ``h`` of that replicate is
``SeedSequence(s, spawn_key=(r, h))``. Keys are hashed by SeedSequence, so
streams are independent of how many siblings exist or the order in which
they are consumed.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed) & _MASK64)


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & _MASK64


def child(seed, *parts) -> np.random.SeedSequence:
    parent = as_seed_sequence(seed)
    return np.random.SeedSequence(
        parent.entropy, spawn_key=tuple(parent.spawn_key) + tuple(_key(p) for p in parts)
    )


def generator(seed, *parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(child(seed, *parts)))
