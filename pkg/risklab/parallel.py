"""
Ordered fan-out over independent work units.

Deutsch:
    Parallele Ausführung unabhängiger Arbeitseinheiten in fester Reihenfolge.
"""

from __future__ import annotations

from typing import Callable, Iterable, List, TypeVar

from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(function: Callable[[T], R], items: Iterable[T], n_jobs: int = 1) -> List[R]:
    """
    Apply ``function`` to every item and return results in input order.

    Units carry their own derived seeds, so the worker count never changes the result.
    """

    work = list(items)
    if n_jobs == 1 or len(work) <= 1:
        return [function(item) for item in work]
    return list(Parallel(n_jobs=n_jobs, backend="threading")(delayed(function)(item) for item in work))
