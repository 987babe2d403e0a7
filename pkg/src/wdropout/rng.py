"""Deterministic derivation of independent random streams.

Every stochastic component (weight init, dropout masks, batch shuffling,
data generation, fold assignment, ...) pulls its own generator derived
from a master seed plus a small integer key path.  Streams with different
keys are statistically independent, and the same ``(seed, key)`` always
reproduces the same draws regardless of what other streams consumed.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "as_generator"]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for sub-stream ``key`` of master ``seed``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


def as_generator(seed_or_rng) -> np.random.Generator:
    """Accept an int seed, an existing Generator, or None (fresh entropy)."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)
