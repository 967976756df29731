"""Timing of the hot loops under the numba build and the pure-numpy build."""
from __future__ import annotations

import time

import numpy as np

from . import _core
from .kde import build_multilevel
from .kernels import KernelSpec
from .sampling import approx_degrees, make_rng, random_walks, sample_edges, sample_neighbors
from .synthetic import gaussian_cloud


def _time(fn, repeat: int = 3) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(n: int = 2000, d: int = 3, draws: int = 2000, walk_len: int = 4,
                  backend: str = "sampling", eps: float = 0.2, repeat: int = 3,
                  seed: int = 0) -> dict:
    """Best-of-``repeat`` wall times in seconds per workload and build.

    The first call of each numba kernel compiles it, so every workload is run
    once untimed before measuring.
    """
    data = gaussian_cloud(n, d, rng=seed)
    # wide bandwidth keeps every pair weight above tau so subsets stay small
    spec = KernelSpec("gaussian", sigma=5.0, tau=0.2)
    tree = build_multilevel(data, spec, eps if backend == "sampling" else 0.0, backend)
    table = approx_degrees(tree, rng=make_rng(seed))
    builds = [False] + ([True] if _core.HAS_NUMBA else [])
    workloads = {
        "degrees": lambda: approx_degrees(tree, rng=make_rng(seed)),
        "neighbors": lambda: sample_neighbors(tree, 0, draws, make_rng(seed), threads=1),
        "edges": lambda: sample_edges(table, tree, draws, make_rng(seed), threads=1),
        "walks": lambda: random_walks(tree, np.zeros(draws // walk_len, np.int64), walk_len,
                                      make_rng(seed), "exact-neighbor", table, threads=1),
    }
    out = {"n": n, "d": d, "draws": draws, "backend": backend, "timings": {}}
    for name, fn in workloads.items():
        row = {}
        for acc in builds:
            with _core.use_numba(acc):
                fn()
                row["numba" if acc else "numpy"] = _time(fn, repeat)
        if "numba" in row and row["numba"] > 0:
            row["speedup"] = row["numpy"] / row["numba"]
        out["timings"][name] = row
    return out


if __name__ == "__main__":  # pragma: no cover
    import json

    print(json.dumps(run_benchmark(), indent=2))
