"""Thread cap for independent per-time sweeps."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ArgumentError

ENV_VAR = "DICHOTOMY_LAB_THREADS"


def thread_cap():
    """Worker count from ``DICHOTOMY_LAB_THREADS`` (default: CPU count)."""
    raw = os.environ.get(ENV_VAR)
    if raw is None or raw.strip() == "":
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ArgumentError(f"{ENV_VAR} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ArgumentError(f"{ENV_VAR} must be a positive integer, got {raw!r}")
    return n


def ordered_map(fn, items):
    """``list(map(fn, items))`` spread over at most ``thread_cap()`` threads, order kept."""
    items = list(items)
    workers = min(thread_cap(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
