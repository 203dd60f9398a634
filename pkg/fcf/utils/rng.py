"""Seeded random streams.

Every consumer asks for its own generator keyed by ``(seed, purpose,
index)``. Streams are PCG64 generators derived through numpy's
``SeedSequence`` spawn keys, so they are identical across runs and
platforms and never share state between workers.
"""
import zlib

import numpy as np


def purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def make_rng(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent generator for one (purpose, index) pair."""
    sequence = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(purpose_key(purpose), int(index))
    )
    return np.random.Generator(np.random.PCG64(sequence))
