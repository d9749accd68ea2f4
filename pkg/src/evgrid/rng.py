"""Named deterministic RNG substreams derived from a single master seed.

Every random draw in a run comes from a substream keyed by (purpose, entity
indices...).  Draws are materialized before any parallel dispatch, so results
do not depend on worker count or backend.
"""
import numpy as np

# purpose tags; values are part of the reproducibility contract
SCENARIO_WIND = 1
SCENARIO_FLEET = 2
ROLLOUT_WIND = 3
ROLLOUT_ACTIONS = 4
ROLLOUT_ARRIVALS = 5


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (purpose, indices...) key."""
    entropy = (int(master_seed),) + tuple(int(x) for x in key)
    return np.random.default_rng(np.random.SeedSequence(entropy))
