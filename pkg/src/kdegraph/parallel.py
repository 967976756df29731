"""Opt-in thread parallelism for Monte Carlo batches.

Batches are split into one chunk per thread, each driven by a generator
spawned from the caller's. The compiled kernels release the GIL, so chunks
run concurrently under the numba build. Results depend on the thread count
but are reproducible for a fixed seed and thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ContractError


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        raw = os.environ.get("KG_THREADS", "1").strip() or "1"
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ContractError(f"KG_THREADS must be an integer, got {raw!r}") from exc
    if threads < 1:
        raise ContractError("thread count must be at least 1")
    return int(threads)


def split_counts(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if k < extra else 0) for k in range(parts)]


def run_chunks(fn, total: int, rng: np.random.Generator, threads: int | None = None):
    """Call ``fn(offset, count, rng)`` over chunks of ``range(total)``.

    Returns the per-chunk results in order. With one thread ``fn`` gets the
    caller's generator directly, so no stream splitting happens.
    """
    threads = min(resolve_threads(threads), max(total, 1))
    if threads == 1:
        return [fn(0, total, rng)]
    sizes = split_counts(total, threads)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).tolist()
    streams = rng.spawn(threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, off, size, g)
                   for off, size, g in zip(offsets, sizes, streams)]
        return [f.result() for f in futures]
