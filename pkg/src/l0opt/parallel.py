"""Per-atom parallel map with ordered gather.

Atom subproblems never share state, so results do not depend on the worker
count: each atom is computed by the same code path and collected in atom
order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

_threads = 1


def resolve_threads(value=None) -> int:
    """Parse ``n`` / ``"auto"``; falls back to ``L0OPT_THREADS`` then 1."""
    if value is None:
        value = os.environ.get("L0OPT_THREADS", "1")
    if isinstance(value, str):
        if value.strip().lower() == "auto":
            return max(1, os.cpu_count() or 1)
        value = int(value)
    if value < 1:
        raise ValueError("thread count must be positive")
    return int(value)


def get_threads() -> int:
    return _threads


def set_threads(n) -> None:
    global _threads
    _threads = resolve_threads(n)


@contextmanager
def threads(n):
    global _threads
    old = _threads
    _threads = resolve_threads(n)
    try:
        yield
    finally:
        _threads = old


def atom_map(fn, items):
    items = list(items)
    if _threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(fn, items))
