"""Seed splitting.

Every random stream in the toolkit is derived from a master seed through
``numpy.random.SeedSequence(master, spawn_key=path)`` where ``path`` is a
tuple of small integers: the stage number from ``STAGES`` followed by any
per-item counters (scene index, repetition ...). Stages can therefore be
rerun independently and items processed in any order.
"""

import numpy as np

STAGES = {
    "data": 0,
    "noise": 1,
    "map_train": 2,
    "pred_train": 3,
    "eval": 4,
    "verify": 5,
}


def sub_seed(master: int, *path: int) -> int:
    """A 63-bit integer seed for the stream at ``path`` below ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def stage_seed(master: int, stage: str, *path: int) -> int:
    return sub_seed(master, STAGES[stage], *path)


def make_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path)))
