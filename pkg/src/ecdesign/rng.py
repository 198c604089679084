"""Counter-based random streams.

Every random quantity is drawn from a Philox generator keyed by a root seed
plus a spawn key, so any stream can be re-derived without replaying others.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for ``seed`` and the integer path ``key``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` for seeding a sub-stream."""
    return int(rng.integers(0, 2**63 - 1))
