"""KDE oracles: exact and random-subset backends, and the range tree over them.

An oracle answers ``sum_{x in X[lo:hi]} k(x, y)`` up to a relative error.
The tree keeps one logical oracle per node of a balanced binary split of the
index range, which is what weighted descent sampling needs.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from . import counters
from ._core import EXACT, SAMPLING, kernels
from .errors import ContractError
from .kernels import Dataset, KernelSpec

# subset size r = ceil(SUBSET_CONST / (tau * eps^2)): Chebyshev with a
# relative variance of at most 1/(tau r) gives per-estimate failure <= 1/4
SUBSET_CONST = 4.0
# repetitions rho = ceil(MEDIAN_CONST * ln(1/delta)): Hoeffding on the count
# of failed estimates with per-estimate failure 1/4 gives exp(-rho/8)
MEDIAN_CONST = 8.0


@dataclass(frozen=True)
class KdeEstimate:
    value: float
    eps: float

    def __post_init__(self):
        if self.value < 0:
            raise ContractError("kde estimate must be nonnegative")


def _rng(rng):
    return np.random.default_rng() if rng is None else rng


class KdeOracle(ABC):
    """Kernel-sum oracle over a fixed dataset.

    ``query`` is randomized but keeps no state between calls. Callers pass an
    explicit ``numpy.random.Generator``; parallel callers pass independent ones.
    """

    kind: int
    eps: float
    tau: float
    cost_exponent: float = 1.0

    def __init__(self, dataset: Dataset, spec: KernelSpec):
        self.dataset = dataset
        self.spec = spec
        self.tau = spec.tau

    @property
    def n(self):
        return self.dataset.n

    @abstractmethod
    def subset_size(self) -> int:
        ...

    @abstractmethod
    def repetitions(self) -> int:
        ...

    def range_sum(self, lo: int, hi: int, y, rng=None, skip: int = -1) -> KdeEstimate:
        """Estimate the kernel sum of ``y`` against rows ``lo..hi-1``.

        When the sum is computed exactly, row ``skip`` is left out of it.
        """
        if not (0 <= lo <= hi <= self.n):
            raise ContractError(f"range [{lo}, {hi}) outside [0, {self.n})")
        if hi == lo:
            counters.add(kde_queries=1)
            return KdeEstimate(0.0, 0.0)
        y = np.ascontiguousarray(np.atleast_1d(np.asarray(y, dtype=np.float64)))
        if y.shape[0] != self.dataset.d:
            raise ContractError("query dimension does not match the dataset")
        fam, inv_s, beta = self.spec.args()
        value, sampled, evals = kernels().range_sum(
            self.dataset.points, lo, hi, y, int(skip), fam, inv_s, beta, self.kind,
            self.subset_size(), self.repetitions(), _rng(rng))
        counters.add(kde_queries=1, kde_kernel_evaluations=evals)
        return KdeEstimate(float(value), self.eps if sampled else 0.0)

    def query(self, y, rng=None) -> KdeEstimate:
        return self.range_sum(0, self.n, y, rng)

    def query_many(self, Y, rng=None, lo: int = 0, hi: int | None = None,
                   skip_self: bool = False):
        """Estimates for each row of ``Y`` plus flags marking sampled ones.

        ``skip_self`` requires ``Y`` to be the dataset itself; rows whose sum is
        computed exactly then leave out their own index, which avoids the
        cancellation of subtracting the unit self term afterwards.
        """
        hi = self.n if hi is None else hi
        Y = np.ascontiguousarray(np.asarray(Y, dtype=np.float64))
        if skip_self and Y.shape[0] != self.n:
            raise ContractError("skip_self needs one query per dataset row")
        fam, inv_s, beta = self.spec.args()
        vals, flags, evals = kernels().point_sums(
            self.dataset.points, fam, inv_s, beta, lo, hi, self.kind,
            self.subset_size(), self.repetitions(), Y, bool(skip_self), _rng(rng))
        counters.add(kde_queries=Y.shape[0], kde_kernel_evaluations=evals)
        return vals, flags.astype(bool)


class ExactKde(KdeOracle):
    """Direct summation. Zero error, linear cost per query."""

    kind = EXACT
    eps = 0.0

    def subset_size(self):
        return 1

    def repetitions(self):
        return 1


class SamplingKde(KdeOracle):
    """Median of independent uniform-subset means.

    Each query draws fresh subsets of size ``r`` with replacement; if ``r`` is
    at least the range size the range is summed exactly instead.
    """

    kind = SAMPLING

    def __init__(self, dataset, spec, eps, delta, subset_const=SUBSET_CONST,
                 median_const=MEDIAN_CONST):
        super().__init__(dataset, spec)
        if not (0 < eps < 1 and 0 < delta < 1):
            raise ContractError("eps and delta must lie in (0, 1)")
        self.eps = float(eps)
        self.delta = float(delta)
        # any r >= n already means an exact sum; the cap keeps r a machine integer
        self.r = min(int(math.ceil(subset_const / (spec.tau * eps * eps))), dataset.n)
        self.rho = max(1, int(math.ceil(median_const * math.log(1.0 / delta))))

    def subset_size(self):
        return self.r

    def repetitions(self):
        return self.rho


def build_exact_oracle(dataset: Dataset, spec: KernelSpec) -> ExactKde:
    return ExactKde(dataset, spec)


def build_sampling_oracle(dataset: Dataset, spec: KernelSpec, eps: float,
                          delta: float = 0.01) -> SamplingKde:
    return SamplingKde(dataset, spec, eps, delta)


def make_oracle(dataset, spec, backend="exact", eps=0.1, delta=0.01) -> KdeOracle:
    if backend == "exact":
        return ExactKde(dataset, spec)
    if backend == "sampling":
        return SamplingKde(dataset, spec, eps, delta)
    raise ContractError(f"unknown kde backend {backend!r}")


class MultiLevelKde:
    """Binary range tree over dataset indices with one oracle per node.

    Node 0 is the root ``[0, n)``. A node of size ``m > 1`` has a left child
    of size ``m // 2`` and a right child with the rest. Leaves hold one index.
    Every node shares the backend's precision, so building the tree with a
    finer ``eps`` is how callers ask for finer per-level estimates.
    """

    def __init__(self, oracle: KdeOracle):
        self.oracle = oracle
        self.dataset = oracle.dataset
        self.spec = oracle.spec
        n = self.dataset.n
        lo = [0]
        hi = [n]
        left = [-1]
        right = [-1]
        stack = [0]
        while stack:
            node = stack.pop()
            a, b = lo[node], hi[node]
            if b - a <= 1:
                continue
            mid = a + (b - a) // 2
            for s, e in ((a, mid), (mid, b)):
                lo.append(s)
                hi.append(e)
                left.append(-1)
                right.append(-1)
            left[node] = len(lo) - 2
            right[node] = len(lo) - 1
            stack.extend((left[node], right[node]))
        self.lo = np.array(lo, dtype=np.int64)
        self.hi = np.array(hi, dtype=np.int64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self._index = {(int(s), int(e)): k for k, (s, e) in enumerate(zip(lo, hi))}
        self.height = int(math.ceil(math.log2(n))) if n > 1 else 0

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def eps(self) -> float:
        return self.oracle.eps

    @property
    def node_count(self) -> int:
        return self.lo.shape[0]

    def ranges(self):
        return list(zip(self.lo.tolist(), self.hi.tolist()))

    def leaves(self):
        mask = self.left < 0
        return sorted(zip(self.lo[mask].tolist(), self.hi[mask].tolist()))

    def node_of(self, rng_range) -> int:
        key = (int(rng_range[0]), int(rng_range[1]))
        if key not in self._index:
            raise ContractError(f"{key} is not a node of the range tree")
        return self._index[key]

    def children(self, node: int):
        if self.left[node] < 0:
            return None
        return int(self.left[node]), int(self.right[node])

    def range_query(self, rng_range, y, rng=None) -> KdeEstimate:
        node = self.node_of(rng_range)
        return self.oracle.range_sum(int(self.lo[node]), int(self.hi[node]), y, rng)

    def core_args(self):
        """Positional prefix shared by every tree kernel in ``_core``."""
        fam, inv_s, beta = self.spec.args()
        o = self.oracle
        return (self.dataset.points, fam, inv_s, beta, self.lo, self.hi,
                self.left, self.right, o.kind, o.subset_size(), o.repetitions(),
                float(o.eps))


def build_multilevel(dataset: Dataset, spec: KernelSpec, eps: float = 0.0,
                     backend: str = "exact", delta: float = 0.01) -> MultiLevelKde:
    """Range tree whose node oracles all run at precision ``eps``."""
    if dataset.n < 1:
        raise ContractError("need at least one point")
    return MultiLevelKde(make_oracle(dataset, spec, backend, eps, delta))
