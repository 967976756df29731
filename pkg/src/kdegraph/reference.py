"""Dense brute-force oracles for testing. Quadratic or worse; never on the fast path.

Nothing here touches the cost counters.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ._core import kernel_block
from .errors import ContractError
from .kernels import Dataset, KernelSpec, brute_min_pair_weight

DENSE_CAP = 2000
INCIDENCE_CAP = 500


def dense_matrix(dataset: Dataset, spec: KernelSpec, cap: int = DENSE_CAP) -> np.ndarray:
    """Full symmetric kernel matrix with unit diagonal."""
    if dataset.n > cap:
        raise ContractError(f"dense oracle capped at n = {cap}")
    fam, inv_s, beta = spec.args()
    K = kernel_block(dataset.points, dataset.points, fam, inv_s, beta)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return np.minimum(K, 1.0)


def measured_tau(dataset: Dataset, spec: KernelSpec) -> float:
    return brute_min_pair_weight(dataset, spec)


def off_diagonal(K: np.ndarray) -> np.ndarray:
    A = np.array(K, dtype=np.float64)
    np.fill_diagonal(A, 0.0)
    return A


@dataclass
class ExactDistributions:
    """Exact laws of the samplers on the self-loop-free kernel graph."""

    degrees: np.ndarray
    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return self.degrees.shape[0]

    @property
    def degree_dist(self) -> np.ndarray:
        return self.degrees / self.degrees.sum()

    def row_dist(self, i: int) -> np.ndarray:
        return self.adjacency[i] / self.degrees[i]

    def edge_pairs(self):
        iu, ju = np.triu_indices(self.n, 1)
        return iu, ju

    @property
    def edge_dist(self) -> np.ndarray:
        """Weights of pairs i < j in ``triu_indices`` order, normalized."""
        iu, ju = self.edge_pairs()
        w = self.adjacency[iu, ju]
        return w / w.sum()

    @property
    def walk_matrix(self) -> np.ndarray:
        """Column-stochastic M with M[j, i] = Pr[step i -> j]."""
        return self.adjacency / self.degrees[None, :]

    def walk_power(self, steps: int) -> np.ndarray:
        return np.linalg.matrix_power(self.walk_matrix, steps)

    def walk_endpoint(self, start: int, steps: int) -> np.ndarray:
        e = np.zeros(self.n)
        e[start] = 1.0
        M = self.walk_matrix
        for _ in range(steps):
            e = M @ e
        return e

    def return_moments(self, max_len: int) -> np.ndarray:
        """tr(M^l)/n for l = 1..max_len."""
        M = self.walk_matrix
        P = np.eye(self.n)
        out = np.empty(max_len)
        for ell in range(max_len):
            P = P @ M
            out[ell] = np.trace(P) / self.n
        return out


def exact_distributions(K: np.ndarray) -> ExactDistributions:
    A = off_diagonal(K)
    return ExactDistributions(A.sum(axis=1), A)


def edge_index(n: int, u, v) -> np.ndarray:
    """Position of pair {u, v} in ``np.triu_indices(n, 1)`` order."""
    a = np.minimum(u, v)
    b = np.maximum(u, v)
    return a * n - a * (a + 1) // 2 + (b - a - 1)


def laplacian(K: np.ndarray) -> np.ndarray:
    A = off_diagonal(K)
    return np.diag(A.sum(axis=1)) - A


def normalized_laplacian(K: np.ndarray) -> np.ndarray:
    A = off_diagonal(K)
    s = 1.0 / np.sqrt(A.sum(axis=1))
    return np.eye(A.shape[0]) - s[:, None] * A * s[None, :]


def dense_laplacian_eig(K: np.ndarray):
    """Ascending spectra of L and of I - D^{-1/2} A D^{-1/2}."""
    return np.linalg.eigvalsh(laplacian(K)), np.linalg.eigvalsh(normalized_laplacian(K))


def incidence_matrix(K: np.ndarray) -> np.ndarray:
    n = K.shape[0]
    if n > INCIDENCE_CAP:
        raise ContractError(f"incidence oracle capped at n = {INCIDENCE_CAP}")
    iu, ju = np.triu_indices(n, 1)
    root = np.sqrt(K[iu, ju])
    H = np.zeros((iu.shape[0], n))
    rows = np.arange(iu.shape[0])
    H[rows, iu] = root
    H[rows, ju] = -root
    return H


def exact_triangle_weight(K: np.ndarray) -> float:
    """Sum over unordered triples of the product of the three pair weights."""
    A = off_diagonal(K)
    return float(np.einsum("ij,jk,ki->", A, A, A) / 6.0)


def triangle_weight_loop(K: np.ndarray) -> float:
    n = K.shape[0]
    total = 0.0
    for i, j, k in itertools.combinations(range(n), 3):
        total += K[i, j] * K[j, k] * K[i, k]
    return total


def per_edge_triangle_weights(K: np.ndarray, rank: np.ndarray) -> np.ndarray:
    """W[u, v] = sum of triangle weights assigned to edge (u, v).

    With ``rank`` a total order, triangle {a, b, c} sorted as a < b < c is
    assigned to its lowest-ranked edge (a, b). Only ordered pairs u < v in
    rank carry weight.
    """
    A = off_diagonal(K)
    n = A.shape[0]
    rank = np.asarray(rank)
    W = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            if rank[u] < rank[v]:
                later = rank > rank[v]
                W[u, v] = A[u, v] * np.sum(A[v, later] * A[u, later])
    return W


def dense_top_eig(K: np.ndarray):
    vals, vecs = np.linalg.eigh(K)
    return float(vals[-1]), vecs[:, -1]


def best_rank_k_error(K: np.ndarray, k: int) -> float:
    """||K - K_k||_F^2 from the singular values."""
    s = np.linalg.svd(K, compute_uv=False)
    return float(np.sum(s[k:] ** 2))


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractError("distributions differ in support size")
    return 0.5 * float(np.abs(p - q).sum())


def empirical(samples, n: int) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.int64).ravel()
    return np.bincount(samples, minlength=n) / samples.shape[0]


def expected_tv_noise(p, draws: int) -> float:
    """Mean TV of an empirical distribution of ``draws`` samples from ``p``.

    Normal approximation: E|p_hat_i - p_i| ~ sqrt(2 p_i (1 - p_i) / (pi N)).
    """
    p = np.asarray(p, dtype=np.float64)
    return 0.5 * float(np.sum(np.sqrt(2 * p * (1 - p) / (np.pi * draws))))


def densest_subgraph_bruteforce(n: int, u, v, w):
    """Exhaustive max over nonempty vertex subsets of induced weight / size."""
    if n > 16:
        raise ContractError("exhaustive densest subgraph capped at n = 16")
    u = np.asarray(u)
    v = np.asarray(v)
    w = np.asarray(w, dtype=np.float64)
    best = (-1.0, None)
    for mask_bits in range(1, 1 << n):
        mask = np.array([(mask_bits >> k) & 1 for k in range(n)], dtype=bool)
        dens = w[mask[u] & mask[v]].sum() / mask.sum()
        if dens > best[0] + 1e-15:
            best = (float(dens), np.flatnonzero(mask))
    return best


def walk_matrix_two_step_enumeration(K: np.ndarray, start: int) -> np.ndarray:
    """Two-step endpoint law by explicit path enumeration (for cross-checks)."""
    d = exact_distributions(K)
    out = np.zeros(d.n)
    for mid in range(d.n):
        p1 = d.adjacency[start, mid] / d.degrees[start]
        if p1 == 0:
            continue
        for end in range(d.n):
            out[end] += p1 * d.adjacency[mid, end] / d.degrees[mid]
    return out
