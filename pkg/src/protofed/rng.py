"""Deterministic RNG streams derived from a root seed.

Every random decision in the simulator draws from a named stream so results
depend only on (seed, purpose, round, client), never on evaluation order or
thread scheduling.
"""

from __future__ import annotations

import numpy as np

# Stream domains.  Values are part of the reproducibility contract: changing
# them changes every seeded run.
DOMAIN_DATASET = 0
DOMAIN_PARTITION = 1
DOMAIN_MISSING = 2
DOMAIN_ZERO_FILL = 3
DOMAIN_INIT = 4
DOMAIN_SAMPLE = 5
DOMAIN_CLIENT = 6
DOMAIN_EVAL_MASK = 7


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for (seed, key).

    The same (seed, key) always yields the same stream; distinct keys yield
    statistically independent streams.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))
