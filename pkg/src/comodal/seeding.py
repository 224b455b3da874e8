"""Deterministic seed derivation shared by every stochastic component.

Generator contract: dataset synthesis, fold shuffling, and derangements use
numpy's PCG64 (``numpy.random.default_rng``); parameter initialization and
dropout masks use torch CPU generators. Both are fed from 63-bit seeds
derived here, so one experiment seed pins the whole pipeline.
"""

from __future__ import annotations

import numpy as np

MAX_SEED = 2**63 - 1


def derive_seed(*parts: int) -> int:
    """Mix integer parts into a fresh 63-bit seed, stable across processes."""
    if not parts:
        raise ValueError("derive_seed needs at least one part")
    entropy = [int(p) & MAX_SEED for p in parts]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]
    return int(state) & MAX_SEED
