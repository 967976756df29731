"""Degree estimation and weighted sampling on the implicit kernel graph.

All samplers report the exact probability with which they emitted each
outcome, because downstream estimators reweight by it.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import counters
from ._core import EXACT, ERR_ENVELOPE, ERR_ROUNDS, ERR_TAU, MAX_ROUNDS, OK, kernels
from .errors import BudgetError, ContractError, EnvelopeError, TauInconsistencyError
from .kde import MultiLevelKde
from .parallel import run_chunks


def make_rng(seed=0) -> np.random.Generator:
    """Counter-based generator (Philox); ``spawn`` gives independent streams."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def _check(code, what=""):
    if code == OK:
        return
    if code == ERR_TAU:
        raise TauInconsistencyError(
            f"both child estimates nonpositive during {what or 'descent'}; "
            "the declared tau is inconsistent with the data")
    if code == ERR_ENVELOPE:
        raise EnvelopeError(
            f"rejection acceptance ratio exceeded 1 during {what or 'sampling'}")
    if code == ERR_ROUNDS:
        raise BudgetError(f"rejection sampling exceeded {MAX_ROUNDS} rounds; "
                          "the envelope is too loose for this tau")
    raise RuntimeError(f"unknown kernel status {code}")


# ---------------------------------------------------------------------------
# degrees and array sampling


@dataclass
class DegreeTable:
    """Approximate weighted degrees with prefix sums for O(log n) sampling."""

    p: np.ndarray
    prefix: np.ndarray
    eps: float
    clamped: np.ndarray

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def total(self) -> float:
        return float(self.prefix[-1])

    @property
    def probs(self) -> np.ndarray:
        return self.p / self.total

    def upper_degree(self, i: int) -> float:
        """Certified upper bound on the true degree of vertex i."""
        if self.clamped[i]:
            return float(self.n - 1)
        return float(self.p[i] / (1.0 - self.eps))


def approx_degrees(tree: MultiLevelKde, eps: float | None = None, rng=None) -> DegreeTable:
    """One root query per point, minus the self term.

    Sampled estimates have (1 - eps) subtracted for the self term; sums the
    oracle computes exactly simply leave the point itself out. Nonpositive
    results are clamped to ``(1 - eps)(n - 1) tau``, the smallest degree the
    declared tau allows, and a warning is issued.
    """
    rng = make_rng(rng)
    n = tree.n
    if n < 2:
        raise ContractError("degrees need at least two points")
    eps = tree.eps if eps is None else float(eps)
    vals, sampled = tree.oracle.query_many(tree.dataset.points, rng, skip_self=True)
    p = np.where(sampled, vals - (1.0 - tree.eps), vals)
    clamped = p <= 0
    if clamped.any():
        floor = (1.0 - eps) * (n - 1) * tree.spec.tau
        if floor <= 0:
            raise TauInconsistencyError("degree floor is nonpositive")
        warnings.warn(f"clamped {int(clamped.sum())} nonpositive degree estimates",
                      RuntimeWarning, stacklevel=2)
        p = np.where(clamped, floor, p)
    return DegreeTable(p=p, prefix=np.cumsum(p), eps=eps, clamped=clamped)


def degree_table_from_values(p, eps: float = 0.0) -> DegreeTable:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise ContractError("degrees must be positive")
    return DegreeTable(p=p, prefix=np.cumsum(p), eps=eps,
                       clamped=np.zeros(p.shape[0], bool))


def prefix_sums(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise ContractError("need a nonempty 1-d array")
    if np.any(~(a > 0)):
        raise ContractError("array entries must be positive")
    return np.cumsum(a)


def sample_from_prefix(prefix, rng, size=None):
    """Index i with probability proportional to ``prefix[i] - prefix[i-1]``."""
    u = rng.random(size) * prefix[-1]
    idx = np.searchsorted(prefix, u, side="right")
    return np.minimum(idx, prefix.shape[0] - 1)


def sample_from_array(a, rng, size=None):
    """Sample indices proportional to a positive array via binary search."""
    return sample_from_prefix(prefix_sums(a), make_rng(rng), size)


def array_descent_probabilities(a) -> np.ndarray:
    """Exact emission probabilities of descending a balanced tree over ``a``.

    At each node the left child is taken with probability (left sum)/(node
    sum); the product over the path telescopes to a_i / sum(a).
    """
    a = np.asarray(a, dtype=np.float64)
    out = np.empty(a.shape[0])

    def rec(lo, hi, prob):
        if hi - lo == 1:
            out[lo] = prob
            return
        mid = lo + (hi - lo) // 2
        left = a[lo:mid].sum()
        tot = a[lo:hi].sum()
        rec(lo, mid, prob * left / tot)
        rec(mid, hi, prob * (tot - left) / tot)

    rec(0, a.shape[0], 1.0)
    return out


def sample_vertex(table: DegreeTable, rng, size=None):
    return sample_from_prefix(table.prefix, rng, size)


# ---------------------------------------------------------------------------
# neighbors


@dataclass
class SampledNeighbor:
    index: int
    path_prob: float
    rounds: int = 1


@dataclass
class NeighborBatch:
    index: np.ndarray
    path_prob: np.ndarray
    rounds: int


def _finish(evals, queries, direct=0):
    counters.add(kernel_evaluations=direct, kde_queries=queries,
                 kde_kernel_evaluations=evals)


def _check_vertex(tree, i):
    if tree.n < 2:
        raise ContractError("neighbor sampling needs at least two points")
    if not 0 <= i < tree.n:
        raise ContractError(f"vertex {i} out of range")


def sample_neighbors(tree: MultiLevelKde, i: int, count: int, rng,
                     threads=None) -> NeighborBatch:
    """``count`` independent tree-descent neighbor draws from vertex ``i``."""
    _check_vertex(tree, i)
    args = tree.core_args()

    def chunk(off, size, g):
        idx, prob, ev, qu, code = kernels().neighbors(*args, i, size, g)
        _finish(ev, qu)
        _check(code, "neighbor sampling")
        return idx, prob

    parts = run_chunks(chunk, count, rng, threads)
    return NeighborBatch(np.concatenate([p[0] for p in parts]),
                         np.concatenate([p[1] for p in parts]), count)


def sample_neighbor(tree: MultiLevelKde, i: int, rng) -> SampledNeighbor:
    b = sample_neighbors(tree, i, 1, rng, threads=1)
    return SampledNeighbor(int(b.index[0]), float(b.path_prob[0]))


def neighbor_probabilities(tree: MultiLevelKde, src, dst, rng=None) -> np.ndarray:
    """Replay the descent from each ``src`` toward ``dst`` and return path probs.

    Under the exact backend the result is deterministic. Under the sampling
    backend it is the probability realized by this replay's own estimates.
    """
    src = np.atleast_1d(np.asarray(src, dtype=np.int64))
    dst = np.atleast_1d(np.asarray(dst, dtype=np.int64))
    if src.shape != dst.shape or np.any(src == dst):
        raise ContractError("replay needs matching arrays of distinct pairs")
    out, ev, qu, code = kernels().replay_probs(*tree.core_args(), src, dst,
                                               make_rng(rng))
    _finish(ev, qu)
    _check(code, "descent replay")
    return out


def envelope_factor(tree: MultiLevelKde) -> float:
    """Worst-case ratio between true neighbor probabilities and descent ones.

    A level where a child range of size m is estimated by sampling can shrink
    the chosen branch probability by (1 - e) / (1 + e (1 + 2 / (tau (m - 1)))):
    the relative error on both children plus the self-term slack, which is at
    most 2e against a child sum of at least tau (m - 1). Levels whose children
    are summed exactly contribute nothing. The factor is the product over
    depths of the worst level factor at that depth.
    """
    e = tree.eps
    if e == 0 or tree.oracle.kind == EXACT:
        return 1.0
    r = tree.oracle.subset_size()
    tau = tree.spec.tau
    worst = {}
    stack = [(0, 0)]
    while stack:
        node, depth = stack.pop()
        kids = tree.children(node)
        if kids is None:
            continue
        for c in kids:
            m = int(tree.hi[c] - tree.lo[c])
            if m > r:
                f = (1.0 + e * (1.0 + 2.0 / (tau * (m - 1)))) / (1.0 - e)
                worst[depth] = max(worst.get(depth, 1.0), f)
            stack.append((c, depth + 1))
    out = 1.0
    for f in worst.values():
        out *= f
    return out


def rejection_envelopes(tree: MultiLevelKde, table: DegreeTable) -> np.ndarray:
    deg_upper = np.where(table.clamped, tree.n - 1.0, table.p / (1.0 - table.eps))
    return deg_upper * envelope_factor(tree)


def sample_neighbors_exact(tree: MultiLevelKde, i: int, count: int, rng,
                           table: DegreeTable | None = None,
                           threads=None) -> NeighborBatch:
    """Rejection-corrected draws whose law is exactly k(x_i, .)/deg(x_i).

    Each candidate from the descent is accepted with probability
    k(x_i, x_j) / (path_prob * envelope); an acceptance ratio above one means
    the envelope was not a valid bound and raises :class:`EnvelopeError`.
    """
    _check_vertex(tree, i)
    rng = make_rng(rng)
    if table is None:
        est = tree.oracle.range_sum(0, tree.n, tree.dataset.points[i], rng, skip=i)
        p_i = est.value - (1.0 - est.eps) if est.eps else est.value
        deg_upper = p_i / (1.0 - est.eps)
        if p_i <= 0:
            raise TauInconsistencyError("nonpositive degree estimate")
    else:
        deg_upper = table.upper_degree(i)
    env = deg_upper * envelope_factor(tree)
    args = tree.core_args()

    def chunk(off, size, g):
        idx, prob, rounds, ev, qu, di, code = kernels().exact_neighbors(
            *args, i, env, size, g)
        _finish(ev, qu, di)
        _check(code, "rejection sampling")
        return idx, prob, rounds

    parts = run_chunks(chunk, count, rng, threads)
    return NeighborBatch(np.concatenate([p[0] for p in parts]),
                         np.concatenate([p[1] for p in parts]),
                         int(sum(p[2] for p in parts)))


def sample_neighbor_exact(tree: MultiLevelKde, i: int, rng,
                          table: DegreeTable | None = None) -> SampledNeighbor:
    b = sample_neighbors_exact(tree, i, 1, rng, table, threads=1)
    return SampledNeighbor(int(b.index[0]), float(b.path_prob[0]), b.rounds)


# ---------------------------------------------------------------------------
# edges


@dataclass
class SampledEdge:
    u: int
    v: int
    q_uv: float
    q_vu: float
    p_u: float
    p_v: float

    @property
    def prob(self) -> float:
        """Probability that this unordered pair is emitted by one draw."""
        return self.p_u * self.q_uv + self.p_v * self.q_vu


@dataclass
class EdgeBatch:
    u: np.ndarray
    v: np.ndarray
    q_uv: np.ndarray
    q_vu: np.ndarray
    p_u: np.ndarray
    p_v: np.ndarray

    def __len__(self):
        return self.u.shape[0]

    @property
    def prob(self) -> np.ndarray:
        return self.p_u * self.q_uv + self.p_v * self.q_vu

    def __getitem__(self, k) -> SampledEdge:
        return SampledEdge(int(self.u[k]), int(self.v[k]), float(self.q_uv[k]),
                           float(self.q_vu[k]), float(self.p_u[k]), float(self.p_v[k]))


def sample_edges(table: DegreeTable, tree: MultiLevelKde, count: int, rng,
                 threads=None) -> EdgeBatch:
    """Draw u by degree, v by descent from u, and replay v -> u for q_vu."""
    if tree.n < 2:
        raise ContractError("edge sampling needs at least two points")
    args = tree.core_args()

    def chunk(off, size, g):
        us, vs, quv, qvu, ev, qu, code = kernels().edges(*args, table.prefix, size, g)
        _finish(ev, qu)
        _check(code, "edge sampling")
        return us, vs, quv, qvu

    parts = run_chunks(chunk, count, make_rng(rng), threads)
    u, v, quv, qvu = (np.concatenate([p[k] for p in parts]) for k in range(4))
    probs = table.probs
    return EdgeBatch(u, v, quv, qvu, probs[u], probs[v])


def sample_edge(table: DegreeTable, tree: MultiLevelKde, rng) -> SampledEdge:
    return sample_edges(table, tree, 1, rng, threads=1)[0]


# ---------------------------------------------------------------------------
# walks


@dataclass
class WalkResult:
    endpoint: int
    steps: int
    trace: np.ndarray | None = None
    rounds: int = 0


@dataclass
class WalkBatch:
    trace: np.ndarray
    rounds: int

    @property
    def endpoints(self) -> np.ndarray:
        return self.trace[:, -1]


def random_walks(tree: MultiLevelKde, starts, steps: int, rng, mode: str = "approx",
                 table: DegreeTable | None = None, threads=None) -> WalkBatch:
    """Independent walks of ``steps`` neighbor moves from each start vertex.

    ``mode="exact-neighbor"`` uses rejection-corrected moves and needs degree
    upper bounds; a table is built when none is given.
    """
    if steps < 0:
        raise ContractError("walk length must be nonnegative")
    if mode not in ("approx", "exact-neighbor", "exact"):
        raise ContractError(f"unknown walk mode {mode!r}")
    rng = make_rng(rng)
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    if steps > 0 and tree.n < 2:
        raise ContractError("walks need at least two points")
    exact = mode != "approx"
    if exact and steps > 0:
        if table is None:
            table = approx_degrees(tree, rng=rng)
        env = rejection_envelopes(tree, table)
    else:
        env = np.ones(tree.n)
    args = tree.core_args()

    def chunk(off, size, g):
        trace, rounds, ev, qu, di, code = kernels().walks(
            *args, starts[off:off + size], steps, exact, env, g)
        _finish(ev, qu, di)
        _check(code, "random walk")
        return trace, rounds

    parts = run_chunks(chunk, starts.shape[0], rng, threads)
    return WalkBatch(np.concatenate([p[0] for p in parts]),
                     int(sum(p[1] for p in parts)))


def random_walk(tree: MultiLevelKde, start: int, steps: int, rng,
                mode: str = "approx", table: DegreeTable | None = None,
                record_trace: bool = True) -> WalkResult:
    b = random_walks(tree, [start], steps, rng, mode, table, threads=1)
    trace = b.trace[0] if record_trace else None
    return WalkResult(int(b.trace[0, -1]), steps, trace, b.rounds)


def expected_rounds_bound(tau: float, factor: float = 1.0) -> float:
    """Crude ceiling on mean rejection rounds: envelope inflation over tau."""
    return factor / tau if tau > 0 else math.inf
