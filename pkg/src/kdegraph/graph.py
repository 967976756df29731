"""Graph algorithms on the kernel graph: clustering, densest subgraph, triangles."""
from __future__ import annotations

import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.cluster.vq import kmeans2
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import BudgetError, CalibrationError, ContractError, ConvergenceError
from .kde import MultiLevelKde, build_multilevel
from .kernels import Dataset, KernelSpec, pair_weights
from .sampling import (
    DegreeTable,
    approx_degrees,
    make_rng,
    random_walks,
    sample_edges,
    sample_neighbors_exact,
)
from .sparsify import SparsifierGraph, merge_edges, spectral_sparsify

DEFAULT_WALK_BUDGET = 2_000_000


# ---------------------------------------------------------------------------
# l2 closeness tester and local clustering


@dataclass
class L2TestResult:
    accept: bool
    statistic: float
    threshold: float


def l2_statistic(samples_p, samples_q) -> float:
    """Unbiased estimate of ||p - q||_2^2 from two equal-size samples.

    Within-sample collision pairs estimate ||p||^2 and ||q||^2; cross-sample
    matches estimate <p, q>.
    """
    a = np.asarray(samples_p, dtype=np.int64)
    b = np.asarray(samples_q, dtype=np.int64)
    r = a.shape[0]
    if r < 2 or b.shape[0] != r:
        raise ContractError("need two samples of equal size r >= 2")
    size = int(max(a.max(), b.max())) + 1
    ca = np.bincount(a, minlength=size).astype(np.float64)
    cb = np.bincount(b, minlength=size).astype(np.float64)
    pairs = r * (r - 1) / 2.0
    coll = (np.sum(ca * (ca - 1)) + np.sum(cb * (cb - 1))) / 2.0
    cross = float(np.sum(ca * cb))
    return coll / pairs - 2.0 * cross / (r * r)


def l2_distance_test(samples_p, samples_q, xi: float, delta: float | None = None) -> L2TestResult:
    """Accept when the statistic is at most 2.5 xi (midway in [xi, 4 xi])."""
    stat = l2_statistic(samples_p, samples_q)
    thr = 2.5 * xi
    return L2TestResult(stat <= thr, stat, thr)


@dataclass
class ClusterVerdict:
    same_cluster: bool
    statistic: float
    threshold: float
    xi: float
    samples: int
    walk_length: int


def default_walk_length(n: int, phi_in: float) -> int:
    return int(math.ceil(3.0 * math.log(n) / (phi_in * phi_in)))


def default_walk_samples(n: int, k: int, eps: float, tau: float) -> int:
    return int(math.ceil(math.sqrt(n * k / (eps * tau)) * math.log(1.0 / eps)))


def local_cluster_test(tree: MultiLevelKde, table: DegreeTable, u: int, w: int,
                       phi_in: float, k: int = 2, eps: float = 0.1,
                       tau: float | None = None, rng=None, r: int | None = None,
                       steps: int | None = None, budget: int = DEFAULT_WALK_BUDGET,
                       threads=None) -> ClusterVerdict:
    """Decide whether u and w share a cluster by comparing walk endpoint laws."""
    tau = tree.spec.tau if tau is None else tau
    n = tree.n
    steps = default_walk_length(n, phi_in) if steps is None else steps
    r = default_walk_samples(n, k, eps, tau) if r is None else r
    if 2 * r * steps > budget:
        raise BudgetError(f"needs {r} walks of length {steps} per vertex, "
                          f"over the step budget {budget}")
    rng = make_rng(rng)
    starts = np.concatenate([np.full(r, u), np.full(r, w)])
    batch = random_walks(tree, starts, steps, rng, "exact-neighbor", table, threads)
    ends = batch.endpoints
    xi = 1.0 / (7.0 * n)
    res = l2_distance_test(ends[:r], ends[r:], xi)
    return ClusterVerdict(bool(res.accept), res.statistic, res.threshold, xi, r, steps)


# ---------------------------------------------------------------------------
# spectral clustering


@dataclass
class ClusteringResult:
    labels: np.ndarray
    embedding: np.ndarray
    inertia: float
    eigenvalues: np.ndarray
    graph: SparsifierGraph | None = None


def normalized_adjacency(g: SparsifierGraph) -> sp.csr_matrix:
    A = g.adjacency()
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    Dm = sp.diags(inv)
    return (Dm @ A @ Dm).tocsr()


def bottom_eigenvectors(g: SparsifierGraph, k: int, rng):
    """Bottom-k eigenpairs of I - D^{-1/2} A D^{-1/2}.

    Computed as the top-k of I + D^{-1/2} A D^{-1/2}, whose spectrum lies in
    [0, 2] with the wanted end on top, so Lanczos converges without a shift.
    """
    N = normalized_adjacency(g)
    shifted = sp.identity(g.n, format="csr") + N
    v0 = rng.standard_normal(g.n)
    try:
        vals, vecs = eigsh(shifted, k=k, which="LA", v0=v0, tol=1e-10,
                           maxiter=max(1000, 20 * g.n))
    except ArpackNoConvergence as exc:
        raise ConvergenceError(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(-vals)
    return 2.0 - vals[order], vecs[:, order]


def spectral_cluster(dataset: Dataset, spec: KernelSpec, k: int, eps: float = 0.5,
                     tau: float | None = None, rng=None, t_override: int | None = None,
                     backend: str = "exact", kde_eps: float = 0.1,
                     const: float = 1.0, threads=None) -> ClusteringResult:
    """Sparsify, embed with bottom Laplacian eigenvectors, then k-means."""
    if k < 2:
        raise ContractError("need k >= 2 clusters")
    rng = make_rng(rng)
    tree = build_multilevel(dataset, spec, kde_eps if backend == "sampling" else 0.0, backend)
    table = approx_degrees(tree, rng=rng)
    g = spectral_sparsify(table, tree, eps, tau, rng, t_override, const, threads)
    return cluster_graph(g, k, rng)


def cluster_graph(g: SparsifierGraph, k: int, rng) -> ClusteringResult:
    vals, vecs = bottom_eigenvectors(g, k, rng)
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    Y = vecs / np.where(norms > 0, norms, 1.0)
    seed = int(rng.integers(0, 2 ** 32 - 1))
    centers, labels = kmeans2(Y, k, minit="++", seed=seed)
    inertia = float(np.sum((Y - centers[labels]) ** 2))
    return ClusteringResult(labels.astype(np.int64), vecs, inertia, vals, g)


def misclassification(labels, truth) -> float:
    """Error rate under the best matching of label ids to truth ids."""
    from scipy.optimize import linear_sum_assignment

    labels = np.asarray(labels)
    truth = np.asarray(truth)
    a = np.unique(labels)
    b = np.unique(truth)
    C = np.array([[np.sum((labels == x) & (truth == y)) for y in b] for x in a])
    ri, ci = linear_sum_assignment(-C)
    return 1.0 - C[ri, ci].sum() / labels.shape[0]


# ---------------------------------------------------------------------------
# densest subgraph and arboricity

EXACT_EDGE_CAP = 10_000


def _max_excess(n, u, v, w, g, deg, total):
    """argmax_U w(E(U)) - g |U| via one min cut (Goldberg's network)."""
    G = nx.DiGraph()
    s, t = n, n + 1
    for x in range(n):
        G.add_edge(s, x, capacity=total)
        G.add_edge(x, t, capacity=total + 2.0 * g - deg[x])
    for a, b, c in zip(u.tolist(), v.tolist(), w.tolist()):
        G.add_edge(a, b, capacity=c)
        G.add_edge(b, a, capacity=c)
    _, (side, _) = nx.minimum_cut(G, s, t)
    mask = np.zeros(n, bool)
    mask[[x for x in side if x < n]] = True
    return mask


def densest_subgraph_peel(n: int, u, v, w):
    """Greedy peeling; density within a factor 2 of optimal."""
    u = np.asarray(u)
    v = np.asarray(v)
    w = np.asarray(w, dtype=np.float64)
    deg = np.bincount(u, weights=w, minlength=n) + np.bincount(v, weights=w, minlength=n)
    alive = np.ones(n, bool)
    weight = w.sum()
    best = (weight / n, alive.copy())
    adj = [[] for _ in range(n)]
    for a, b, c in zip(u.tolist(), v.tolist(), w.tolist()):
        adj[a].append((b, c))
        adj[b].append((a, c))
    for size in range(n, 1, -1):
        cand = np.where(alive, deg, np.inf)
        x = int(np.argmin(cand))
        alive[x] = False
        weight -= deg[x]
        for y, c in adj[x]:
            if alive[y]:
                deg[y] -= c
        dens = weight / (size - 1)
        if dens > best[0]:
            best = (dens, alive.copy())
    return float(best[0]), np.flatnonzero(best[1])


def densest_subgraph_exact(n: int, u, v, w, method: str = "exact"):
    """Maximum of w(E(U)) / |U| over nonempty vertex subsets U.

    Exact mode runs Dinkelbach iterations: with g the best density so far, a
    min cut finds the subset maximizing w(E(U)) - g |U|; a positive value
    gives a strictly denser subset, zero certifies optimality. The sequence
    visits finitely many subsets so it terminates.
    """
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ContractError("edge weights must be positive")
    if method == "peel":
        return densest_subgraph_peel(n, u, v, w)
    if u.shape[0] > EXACT_EDGE_CAP:
        raise ContractError(f"exact densest subgraph capped at {EXACT_EDGE_CAP} edges; "
                            "use method='peel'")
    total = float(w.sum())
    if total == 0 or n == 0:
        return 0.0, np.arange(n)
    deg = np.bincount(u, weights=w, minlength=n) + np.bincount(v, weights=w, minlength=n)
    witness = np.ones(n, bool)
    g = total / n
    for _ in range(4 * n + 10):
        mask = _max_excess(n, u, v, w, g, deg, total)
        if not mask.any():
            break
        inner = w[mask[u] & mask[v]].sum()
        dens = inner / mask.sum()
        if dens <= g * (1 + 1e-12):
            break
        g = dens
        witness = mask
    return float(g), np.flatnonzero(witness)


@dataclass
class ArboricityEstimate:
    alpha_hat: float
    witness: np.ndarray
    m_samples: int
    Delta: float
    graph: SparsifierGraph


def default_arboricity_draws(n: int, eps: float, Delta: float, const: float = 1.0) -> int:
    return int(math.ceil(const * n * Delta * math.log(max(n, 2)) / (eps * eps)))


def arboricity_estimate(table: DegreeTable, tree: MultiLevelKde, eps: float,
                        tau: float | None = None, rng=None, m: int | None = None,
                        Delta: float | None = None, const: float = 1.0,
                        reference=None, method: str = "exact",
                        threads=None) -> ArboricityEstimate:
    """Densest-subgraph density of an importance-sampled reweighted graph.

    Each draw of edge e adds w_e / (m p_e), so every induced subgraph weight
    is estimated without bias. ``reference`` may be the dense kernel matrix;
    then each emission probability is checked against the factor-2 envelope
    around the true normalized weight.
    """
    tau = tree.spec.tau if tau is None else tau
    Delta = 1.0 / tau if Delta is None else Delta
    n = tree.n
    m = default_arboricity_draws(n, eps, Delta, const) if m is None else m
    batch = sample_edges(table, tree, m, make_rng(rng), threads)
    p = batch.prob
    we = pair_weights(tree.dataset, tree.spec, batch.u, batch.v)
    if reference is not None:
        K = np.asarray(reference)
        iu, ju = np.triu_indices(n, 1)
        W = K[iu, ju].sum()
        ratio = p / (we / W)
        if np.any(ratio < 0.5) or np.any(ratio > 2.0):
            raise CalibrationError(
                f"emission probability ratio range [{ratio.min():.3g}, {ratio.max():.3g}] "
                "leaves the factor-2 envelope")
    g = merge_edges(n, batch.u, batch.v, we / (m * p), m)
    alpha, witness = densest_subgraph_exact(n, g.u, g.v, g.w, method)
    return ArboricityEstimate(alpha, witness, m, Delta, g)


# ---------------------------------------------------------------------------
# triangles


@dataclass
class TriangleEstimate:
    w_hat: float
    R_size: int
    reps_per_edge: int
    group_estimates: np.ndarray


def degree_rank(p) -> np.ndarray:
    """Rank of each vertex under (degree, index) order."""
    p = np.asarray(p)
    order = np.lexsort((np.arange(p.shape[0]), p))
    rank = np.empty_like(order)
    rank[order] = np.arange(p.shape[0])
    return rank


def uniform_pairs(n: int, count: int, rng):
    a = rng.integers(0, n, count)
    b = rng.integers(0, n - 1, count)
    b = b + (b >= a)
    return a, b


def triangle_draw_terms(deg_u: float, w_uv: float, w_vx, x_after_v):
    """Per-draw terms deg(u) w(u,v) w(v,x) [v before x] for neighbor draws x of u.

    With x drawn from u's exact neighbor law their mean is unbiased for the
    triangle weight charged to edge (u, v).
    """
    return deg_u * w_uv * np.asarray(w_vx) * np.asarray(x_after_v, dtype=np.float64)


def triangle_weight_estimate(table: DegreeTable, tree: MultiLevelKde, R_size: int,
                             reps: int, rng=None, groups: int = 5,
                             rank=None) -> TriangleEstimate:
    """Median-of-means estimate of the total triangle weight.

    Every triangle is charged to its edge (u, v) with u before v before the
    third vertex x in degree order. For a uniform pair, x is drawn from
    u's exact neighbor law and deg(u) w(u,v) w(v,x) [v before x] is an
    unbiased estimate of the weight charged to that edge.
    """
    n = tree.n
    if n < 3:
        raise ContractError("triangles need at least three points")
    rng = make_rng(rng)
    rank = degree_rank(table.p) if rank is None else np.asarray(rank)
    npairs = n * (n - 1) / 2.0
    out = np.empty(groups)
    for grp in range(groups):
        a, b = uniform_pairs(n, R_size, rng)
        swap = rank[a] > rank[b]
        u = np.where(swap, b, a)
        v = np.where(swap, a, b)
        wuv = pair_weights(tree.dataset, tree.spec, u, v)
        acc = 0.0
        for e in range(R_size):
            ue, ve = int(u[e]), int(v[e])
            later = np.count_nonzero(rank > rank[ve])
            if later == 0:
                continue
            xs = sample_neighbors_exact(tree, ue, reps, rng, table, threads=1).index
            after = rank[xs] > rank[ve]
            keep = xs[after]
            if keep.size == 0:
                continue
            wvx = pair_weights(tree.dataset, tree.spec, np.full(keep.size, ve), keep)
            acc += triangle_draw_terms(table.p[ue], wuv[e], wvx, True).sum() / reps
        out[grp] = npairs * acc / R_size
    return TriangleEstimate(float(np.median(out)), R_size, reps, out)
