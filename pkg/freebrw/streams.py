"""
Random streams and the replica worker pool.

Every stream is a Philox generator keyed by SHA-256(master_seed, tag, indices),
so a replica's randomness depends only on what it is, never on which worker
runs it or in which order.
"""

from __future__ import annotations

import hashlib
import logging
from multiprocessing import Pool
from typing import Any, Callable, List, Sequence

import numpy as np

log = logging.getLogger(__name__)

SEED_SCHEME = "philox-sha256-v1"


def derive_key(master_seed: int, tag: str, *indices: int) -> int:
    payload = f"{int(master_seed) & 0xFFFFFFFFFFFFFFFF}|{tag}|" + ",".join(str(int(i)) for i in indices)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def make_rng(master_seed: int, tag: str, *indices: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_key(master_seed, tag, *indices)))


def as_rng(rng_state: Any) -> np.random.Generator:
    """Accept a Generator, an int seed, or None (fresh entropy)."""
    if isinstance(rng_state, np.random.Generator):
        return rng_state
    if rng_state is None:
        return np.random.Generator(np.random.Philox())
    return make_rng(int(rng_state), "default")


def parallel_map(func: Callable[[Any], Any], tasks: Sequence[Any], threads: int = 1) -> List[Any]:
    """
    Ordered map over tasks. With threads > 1 a process pool is used; the
    returned list is always in task order, so results do not depend on it.
    """
    tasks = list(tasks)
    if threads <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    workers = min(int(threads), len(tasks))
    log.debug("parallel_map: %d tasks on %d workers", len(tasks), workers)
    with Pool(processes=workers) as pool:
        return pool.map(func, tasks)
