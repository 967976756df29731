"""Process-wide cost counters.

``kernel_evaluations`` counts kernel matrix entries computed directly by an
algorithm (row materialization, rejection checks, edge reweighting).
``kde_kernel_evaluations`` counts evaluations spent inside KDE oracles, and
``kde_queries`` counts oracle calls. Keeping the first two apart mirrors how
KDE-based algorithms are costed: the oracle is a black box with its own price.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import asdict, dataclass


@dataclass
class Counts:
    kernel_evaluations: int = 0
    kde_queries: int = 0
    kde_kernel_evaluations: int = 0

    def __sub__(self, other: "Counts") -> "Counts":
        return Counts(
            self.kernel_evaluations - other.kernel_evaluations,
            self.kde_queries - other.kde_queries,
            self.kde_kernel_evaluations - other.kde_kernel_evaluations,
        )

    def as_dict(self) -> dict:
        return asdict(self)


_lock = threading.Lock()
_counts = Counts()


def add(kernel_evaluations=0, kde_queries=0, kde_kernel_evaluations=0):
    with _lock:
        _counts.kernel_evaluations += int(kernel_evaluations)
        _counts.kde_queries += int(kde_queries)
        _counts.kde_kernel_evaluations += int(kde_kernel_evaluations)


def snapshot() -> Counts:
    with _lock:
        return Counts(**asdict(_counts))


def reset():
    with _lock:
        _counts.kernel_evaluations = 0
        _counts.kde_queries = 0
        _counts.kde_kernel_evaluations = 0


@contextmanager
def track():
    """Yield a Counts object filled with the work done inside the block."""
    out = Counts()
    start = snapshot()
    try:
        yield out
    finally:
        diff = snapshot() - start
        out.kernel_evaluations = diff.kernel_evaluations
        out.kde_queries = diff.kde_queries
        out.kde_kernel_evaluations = diff.kde_kernel_evaluations
