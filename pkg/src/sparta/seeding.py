"""Deterministic seed splitting.

All randomness comes from numpy's PCG64 generator.  A consumer asks for a
stream by (seed, *names); the names are hashed with CRC-32 into the
SeedSequence entropy, so streams are independent of call order and
reproducible on every platform.
"""

from __future__ import annotations

import zlib

import numpy as np


def _words(names) -> list[int]:
    out = []
    for n in names:
        if isinstance(n, (int, np.integer)):
            out.append(int(n) & 0xFFFFFFFF)
        else:
            out.append(zlib.crc32(str(n).encode()))
    return out


def rng(seed: int, *names) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *_words(names)])
    return np.random.Generator(np.random.PCG64(ss))


def subseed(seed: int, *names) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``names``."""
    return int(rng(seed, *names).integers(0, 2**63 - 1))
