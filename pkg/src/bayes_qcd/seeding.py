"""Per-trial random streams and deterministic sharding of trials over workers."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np


def trial_rng(seed: int, trial: int, fingerprint: int = 0) -> np.random.Generator:
    """Independent stream for one trial, keyed by (base seed, trial index, model fingerprint).

    The stream depends only on these three integers, so a trial replays
    identically no matter which worker runs it or in which order.
    """
    if seed < 0 or trial < 0:
        raise ValueError("seed and trial index must be nonnegative")
    return np.random.default_rng([seed, trial, fingerprint])


def shard_ranges(n_trials: int, workers: int) -> list[range]:
    workers = max(1, min(workers, n_trials))
    bounds = np.linspace(0, n_trials, workers + 1).astype(int)
    return [range(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def run_sharded(fn: Callable, n_trials: int, workers: int, *args) -> list:
    """Call ``fn(*args, trials)`` on contiguous shards and concatenate in trial order."""
    shards = shard_ranges(n_trials, workers)
    if len(shards) <= 1:
        return list(fn(*args, range(n_trials)))
    with ProcessPoolExecutor(max_workers=len(shards)) as pool:
        parts = list(pool.map(_call, [(fn, args, s) for s in shards]))
    return [item for part in parts for item in part]


def _call(job):
    fn, args, trials = job
    return fn(*args, trials)
