"""Optional thread pool for independent evaluations (numpy releases the GIL)."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "MCRES_WORKERS"


def workers() -> int:
    try:
        return max(1, int(os.environ.get(ENV_VAR, "1")))
    except ValueError:
        return 1


def pmap(fn, items) -> list:
    """Ordered map; runs on a thread pool when MCRES_WORKERS > 1."""
    items = list(items)
    n = workers()
    if n <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
