"""Thread-pool helper for independent sweep points and optimizer restarts.

Worker count comes from the DRIFTLAB_WORKERS environment variable (default:
up to 4 threads).  Results are assembled in input order, so outputs do not
depend on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["worker_count", "run_parallel"]


def worker_count() -> int:
    raw = os.environ.get("DRIFTLAB_WORKERS", "")
    if raw.strip():
        return max(1, int(raw))
    return min(4, os.cpu_count() or 1)


def run_parallel(fn, items):
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
