"""Reproducible random streams and order-preserving parallel maps.

Samples are processed in fixed-size chunks. Chunk ``c`` of stream ``s``
draws from a Philox generator keyed by ``(seed, s, c)``, so every sample's
random numbers depend only on the seed and the sample index, never on how
chunks are distributed over workers. Partial sums are reduced in chunk order.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

CHUNK_SIZE = 4096

# stream identifiers, kept distinct so different samplers never share draws
STREAM_PAIRS = 1
STREAM_ORDERED = 2
STREAM_GROUPS = 3


def chunk_generator(seed: int, stream: int, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(stream), int(chunk)))
    return np.random.Generator(np.random.Philox(ss))


def chunks(n: int, size: int = CHUNK_SIZE):
    """``[(chunk_index, start, stop), ...]`` covering ``range(n)``."""
    return [(i, start, min(start + size, n)) for i, start in enumerate(range(0, n, size))]


def default_workers() -> int:
    return os.cpu_count() or 1


def ordered_map(func, tasks, workers: int = 1):
    """``[func(t) for t in tasks]``, optionally on a process pool.

    ``func`` must be picklable when ``workers > 1``. Output order always
    matches ``tasks``.
    """
    tasks = list(tasks)
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(func, tasks))


def config_hash(obj) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if hasattr(x, "__dict__"):
        return vars(x)
    return str(x)
