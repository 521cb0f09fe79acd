"""Seed splitting and an order-preserving thread map.

Every random stream is derived from the user seed plus a tuple of tags
(command, module, cell indices), so results never depend on scheduling.
``MECHLAB_THREADS`` caps the worker count (default: CPU count).
"""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def _tag(t) -> int:
    if isinstance(t, (int, np.integer)):
        return int(t)
    return zlib.crc32(str(t).encode())


def child_rng(seed: int, *tags) -> np.random.Generator:
    """Independent generator for the cell named by ``tags``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_tag(t) for t in tags))
    return np.random.default_rng(ss)


def worker_count() -> int:
    env = os.environ.get("MECHLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def pmap(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, run on a thread pool when it helps."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
