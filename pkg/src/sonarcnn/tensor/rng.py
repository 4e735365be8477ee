"""Seeded random streams.

Every stream is a numpy ``Generator`` backed by PCG64, seeded through
``SeedSequence`` so that derived streams (per fold, per run, per worker) are
reproducible across platforms and independent of execution order.
"""
from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for ``seed`` optionally specialised by integer ``keys``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit integer seed derived deterministically from ``seed`` and ``keys``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0]) >> 1
