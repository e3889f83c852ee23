"""Named random sub-streams derived from one master seed.

``stream(7, "inpaint-restart", 2)`` always yields the same generator, and
generators for different names are statistically independent.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed: int, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(n) for n in names)])


def stream(seed: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *names)))
