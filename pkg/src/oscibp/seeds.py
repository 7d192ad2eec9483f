"""Deterministic seed derivation for every randomized stage.

One master seed drives the whole pipeline. Each consumer derives its own
stream as ``SeedSequence([master, key0, key1, ...])``, so results do not
depend on execution order and re-running any stage with the same master
seed reproduces it bit for bit.
"""
from __future__ import annotations

import numpy as np

# Stream tags for the integer key path. Keeping them in one place avoids
# accidental collisions between modules drawing from the same master seed.
STREAM_FOLDS = 1
STREAM_INIT = 2
STREAM_SYNTH = 3

TARGET_CODES = {"SBP": 0, "DBP": 1}


def child_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Return a Generator for the stream identified by ``keys``."""
    seq = np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])
    return np.random.Generator(np.random.PCG64(seq))


def child_seed(master_seed: int, *keys: int) -> int:
    """Collapse a derived stream to a single integer seed."""
    seq = np.random.SeedSequence([int(master_seed), *[int(k) for k in keys]])
    return int(seq.generate_state(1, dtype=np.uint64)[0])
