"""Counter-based random streams.

Every random draw in the package comes from a Philox stream addressed by
``(seed, tag, a, b)``: the 64-bit seed is the Philox key and the remaining
words select a disjoint counter range. Streams can therefore be created in any
order, by any worker, and always produce the same numbers.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream tags, one per consumer
FIELD = 1
EXCURSION = 2
DAVIS = 3
LEMMA1 = 4
SEEDS = 5


def stream(seed: int, tag: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Return the generator for stream ``(seed, tag, a, b)``."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    counter = np.array([0, tag & MASK64, a & MASK64, b & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64, counter=counter))


def derive_seeds(master_seed: int, count: int) -> list[int]:
    """Expand a master seed into ``count`` 63-bit replica seeds."""
    raw = stream(master_seed, SEEDS).integers(0, 2**63 - 1, size=count, dtype=np.int64)
    return [int(s) for s in raw]
