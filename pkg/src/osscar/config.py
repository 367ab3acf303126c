"""Global thread budget honored by the scoring loops.

The budget only controls how many candidate scores may be computed
concurrently; results are keyed by group index and reduced in sorted
order, so the budget never changes numerical output.
"""

from __future__ import annotations

import os

_ENV_VAR = "OSSCAR_THREADS"
_budget: int | None = None


def set_thread_budget(n: int | None) -> None:
    global _budget
    if n is not None and n < 1:
        raise ValueError("thread budget must be >= 1")
    _budget = n


def thread_budget() -> int:
    """Resolved budget: explicit setting, else OSSCAR_THREADS, else cores."""
    if _budget is not None:
        return _budget
    env = os.environ.get(_ENV_VAR)
    if env:
        try:
            value = int(env)
        except ValueError:
            value = 0
        if value >= 1:
            return value
    return os.cpu_count() or 1
