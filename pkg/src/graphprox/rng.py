"""Per-purpose random streams derived from one root seed.

Each purpose string is hashed to a stable integer and used as the spawn key of
a ``numpy.random.SeedSequence``, so adding a new consumer never shifts the
stream seen by an existing one.
"""

import zlib

import numpy as np


def purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def derive_rng(seed: int, purpose: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(purpose_key(purpose),))
    return np.random.default_rng(ss)
