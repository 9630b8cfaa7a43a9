"""Order-preserving thread map capped by ``MOGP_THREADS``."""

import os
from concurrent.futures import ThreadPoolExecutor


def n_workers() -> int:
    """Worker count from ``MOGP_THREADS`` (0 = one per CPU, unset = 1)."""
    raw = os.environ.get("MOGP_THREADS", "1").strip() or "1"
    try:
        n = int(raw)
    except ValueError:
        n = 1
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def pmap(fn, items):
    """``list(map(fn, items))``, possibly threaded. Result order is input order."""
    items = list(items)
    n = min(n_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
