"""Optional thread parallelism, capped by the PLEX_THREADS environment variable.

Results always come back in input order, so observable outputs are
independent of the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    raw = os.environ.get("PLEX_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def ordered_map(fn, items: list) -> list:
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
