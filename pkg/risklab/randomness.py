"""
Seed derivation helpers.

Every random draw in risklab comes from a generator derived from the master seed and
a tuple of integer keys (stage, unit index), so results never depend on scheduling.

Deutsch:
    Ableitung reproduzierbarer Zufallsgeneratoren aus dem Master-Seed.
"""

from __future__ import annotations

import numpy as np

STAGE_CLUSTER = 1
STAGE_BALANCE = 2
STAGE_SPLIT = 3
STAGE_CV = 4
STAGE_MODEL = 5
STAGE_EXPLAIN = 6


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(key) for key in keys)]))


def derive_seed(seed: int, *keys: int) -> int:
    state = np.random.SeedSequence([int(seed), *(int(key) for key in keys)]).generate_state(1, dtype=np.uint64)
    return int(state[0])
