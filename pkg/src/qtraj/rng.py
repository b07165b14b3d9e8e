"""Deterministic random-number streams.

Every stochastic run derives its generator from an integer seed and a key
tuple (typically the trajectory index) through a counter-based Philox
generator.  Draw j of stream (seed, key) is therefore a pure function of
(seed, key, j), independent of scheduling, worker count, or batch layout.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for the given seed and key tuple."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))
