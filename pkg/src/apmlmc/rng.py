"""Reproducible random streams and chunked parallel sampling.

Every block of ``CHUNK`` samples gets its own Philox generator keyed by
(master seed, level, batch, chunk).  Chunk boundaries depend only on the
requested sample count, so results are bit-identical for any worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

CHUNK = 4096
THREADS_ENV = "APMLMC_THREADS"

T = TypeVar("T")


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def chunk_sizes(n: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(fn: Callable[[np.random.Generator, int], T], n: int, seed: int, key: tuple[int, ...],
               workers: int | None = None) -> list[T]:
    """Apply ``fn(rng, size)`` to each chunk of ``n`` samples; results come back in chunk order."""
    sizes = chunk_sizes(n)
    jobs = [(stream(seed, *key, i), s) for i, s in enumerate(sizes)]
    w = min(worker_count(workers), max(len(jobs), 1))
    if w == 1:
        return [fn(g, s) for g, s in jobs]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
