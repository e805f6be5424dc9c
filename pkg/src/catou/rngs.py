"""Deterministic random-stream derivation.

All randomness in the package flows through counter-based Philox generators
keyed by a master seed plus an explicit spawn key. Streams derived from the
same (seed, key) are bit-identical across runs, platforms and thread counts,
and streams with distinct keys are statistically independent.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the sub-stream identified by ``key`` under ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def replica_streams(seed: int, n_replicas: int, *scope: int):
    """One independent stream per replica, indexed ``scope + (replica,)``."""
    return [stream(seed, *scope, i) for i in range(n_replicas)]
