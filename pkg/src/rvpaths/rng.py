"""Reproducible random substreams and chunked parallel replication.

Replications are cut into fixed-size chunks and chunk ``i`` always draws from
the stream derived from ``(seed, key, i)``.  The chunking never depends on the
number of workers, so results are identical for any worker count.
"""
from __future__ import annotations

import zlib
from typing import Callable

import numpy as np
from joblib import Parallel, delayed

DEFAULT_CHUNK = 20_000


def key_int(key) -> int:
    """Stable non-negative integer for a string or integer key."""
    if isinstance(key, (int, np.integer)):
        return int(key)
    return zlib.crc32(str(key).encode())


def substream(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def chunk_sizes(n: int, chunk: int = DEFAULT_CHUNK) -> list[int]:
    full, rest = divmod(int(n), int(chunk))
    return [chunk] * full + ([rest] if rest else [])


def replicate(fn: Callable[[np.random.Generator, int], object], n: int, seed: int, key,
              workers: int = 1, chunk: int = DEFAULT_CHUNK) -> list:
    """Run ``fn(rng, size)`` over fixed chunks of ``n`` replications, in chunk order."""
    sizes = chunk_sizes(n, chunk)
    jobs = [(substream(seed, key, i), s) for i, s in enumerate(sizes)]
    if workers <= 1 or len(jobs) <= 1:
        return [fn(r, s) for r, s in jobs]
    return Parallel(n_jobs=workers)(delayed(fn)(r, s) for r, s in jobs)


def replicate_concat(fn, n: int, seed: int, key, workers: int = 1, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Like `replicate` for functions returning arrays; concatenates along axis 0."""
    return np.concatenate(replicate(fn, n, seed, key, workers, chunk), axis=0)
