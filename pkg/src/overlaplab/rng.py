"""Deterministic seed trees.

Every random draw in the library descends from a single master seed through
counter-style spawn keys, so a (config, seed) pair maps to one stream layout
no matter how work is scheduled across threads.
"""
from __future__ import annotations

import numpy as np


def seed_root(master_seed: int) -> np.random.SeedSequence:
    if not isinstance(master_seed, (int, np.integer)):
        raise ValueError(f"master seed must be an integer, got {master_seed!r}")
    return np.random.SeedSequence(int(master_seed))


def subseq(seq: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Child sequence at a fixed position under `seq`.

    Unlike SeedSequence.spawn this is stateless: the same key always names
    the same child, independent of call order.
    """
    return np.random.SeedSequence(entropy=seq.entropy,
                                  spawn_key=tuple(seq.spawn_key) + tuple(int(k) for k in key))


def generator(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seq))


def child_rng(seq: np.random.SeedSequence, *key: int) -> np.random.Generator:
    return generator(subseq(seq, *key))
