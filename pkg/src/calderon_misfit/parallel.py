"""Deterministic worker-thread helpers.

CALDERON_THREADS caps the worker count (0 or unset = auto).  Results are
always reduced in input order, so reports are bit-identical for any
thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count(explicit=None):
    if explicit is not None and int(explicit) > 0:
        return int(explicit)
    env = os.environ.get("CALDERON_THREADS", "0").strip()
    try:
        n = int(env)
    except ValueError:
        n = 0
    if n > 0:
        return n
    return os.cpu_count() or 1


def ordered_map(fn, items, threads=None):
    """Map preserving input order; sequential when one worker suffices."""
    items = list(items)
    n = worker_count(threads)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as ex:
        return list(ex.map(fn, items))
