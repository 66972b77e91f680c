"""Ordered thread mapping with an environment-variable concurrency cap."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

#: 0 or unset means auto; any positive integer caps the worker count.
THREADS_ENV_VAR = "INDEP_DECOMP_THREADS"


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from exc
    if value <= 0:
        return min(8, os.cpu_count() or 1)
    return value


def thread_map(fn, items):
    """Map ``fn`` over ``items``, preserving order regardless of concurrency."""
    items = list(items)
    cap = min(thread_cap(), len(items))
    if cap <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=cap) as pool:
        return list(pool.map(fn, items))
