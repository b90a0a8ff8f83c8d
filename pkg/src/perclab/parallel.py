"""Thread-count resolution and an order-preserving replica map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["resolve_threads", "map_ordered"]


def resolve_threads(threads=None):
    """Explicit value, else ``PERCLAB_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("PERCLAB_THREADS", "").strip()
        threads = int(env) if env else 1
    threads = int(threads)
    if threads < 1:
        raise ValueError("thread count must be at least 1")
    return threads


def map_ordered(fn, items, threads=None):
    """``[fn(x) for x in items]``, optionally on a thread pool.

    Results come back in input order, so outputs never depend on scheduling.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
