"""Deterministic thread dispatch.

Work items are mapped to results by index and merged in list order, so output
is independent of the worker count; SIGMA_N_THREADS caps the pool size (1
means fully sequential, the default).
"""

from __future__ import annotations

import concurrent.futures
import os


def n_threads() -> int:
    raw = os.environ.get("SIGMA_N_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SIGMA_N_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def thread_map(fn, items):
    """Ordered map over items, threaded when SIGMA_N_THREADS > 1.

    Results come back in item order regardless of completion order, so any
    downstream reduction is deterministic.
    """
    items = list(items)
    workers = min(n_threads(), max(len(items), 1))
    if workers == 1:
        return [fn(it) for it in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
