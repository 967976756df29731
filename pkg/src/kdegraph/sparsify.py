"""Spectral sparsification by importance-sampled edges, and Laplacian solves."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ConvergenceError
from .kde import MultiLevelKde
from .kernels import pair_weights
from .sampling import DegreeTable, make_rng, sample_edges


@dataclass
class SparsifierGraph:
    """Weighted simple graph; ``u[k] < v[k]`` and each pair appears once."""

    n: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: int

    @property
    def num_edges(self) -> int:
        return self.u.shape[0]

    def edges(self):
        return list(zip(self.u.tolist(), self.v.tolist(), self.w.tolist()))

    def adjacency(self) -> sp.csr_matrix:
        A = sp.coo_matrix((self.w, (self.u, self.v)), shape=(self.n, self.n))
        return (A + A.T).tocsr()

    def laplacian(self) -> sp.csr_matrix:
        A = self.adjacency()
        deg = np.asarray(A.sum(axis=1)).ravel()
        return (sp.diags(deg) - A).tocsr()

    def cut_weight(self, mask) -> float:
        mask = np.asarray(mask, dtype=bool)
        return float(self.w[mask[self.u] != mask[self.v]].sum())

    def induced_weight(self, mask) -> float:
        mask = np.asarray(mask, dtype=bool)
        return float(self.w[mask[self.u] & mask[self.v]].sum())


def merge_edges(n: int, u, v, w, t: int) -> SparsifierGraph:
    """Sum weights of repeated unordered pairs."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    a = np.minimum(u, v)
    b = np.maximum(u, v)
    if np.any(a == b):
        raise ContractError("self-loop in sampled edges")
    keys, inv = np.unique(a * n + b, return_inverse=True)
    merged = np.bincount(inv, weights=np.asarray(w, dtype=np.float64))
    return SparsifierGraph(n, keys // n, keys % n, merged, int(t))


def default_draws(n: int, eps: float, tau: float, const: float = 1.0) -> int:
    """Draw count const * n ln n / (eps^2 tau^3), rounded up."""
    return int(math.ceil(const * n * math.log(max(n, 2)) / (eps * eps * tau ** 3)))


def spectral_sparsify(table: DegreeTable, tree: MultiLevelKde, eps: float,
                      tau: float | None = None, rng=None, t_override: int | None = None,
                      const: float = 1.0, threads=None) -> SparsifierGraph:
    """Sample ``t`` edges by approximate weight and reweight to unbiasedness.

    Each draw of pair e contributes k(e) / (t * q_e), with q_e the exact
    probability that one draw emits e. Summing over draws gives an unbiased
    estimate of every edge weight, hence of the Laplacian.
    """
    tau = tree.spec.tau if tau is None else tau
    n = tree.n
    t = t_override if t_override is not None else default_draws(n, eps, tau, const)
    if t < 1:
        raise ContractError("need at least one draw")
    batch = sample_edges(table, tree, t, make_rng(rng), threads)
    prob = batch.prob
    if np.any(~(prob > 0)):
        raise ContractError("sampled edge with nonpositive emission probability")
    kuv = pair_weights(tree.dataset, tree.spec, batch.u, batch.v)
    return merge_edges(n, batch.u, batch.v, kuv / (t * prob), t)


# ---------------------------------------------------------------------------
# Laplacian operators and solver


class LaplacianOperator:
    """L = D - A for a sparse graph or a dense kernel matrix."""

    def __init__(self, L):
        self._L = L
        self.n = L.shape[0]

    @classmethod
    def from_graph(cls, g: SparsifierGraph) -> "LaplacianOperator":
        return cls(g.laplacian())

    @classmethod
    def from_dense(cls, K: np.ndarray) -> "LaplacianOperator":
        A = np.array(K, dtype=np.float64)
        np.fill_diagonal(A, 0.0)
        return cls(np.diag(A.sum(axis=1)) - A)

    def apply(self, x):
        return self._L @ x

    def quad(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(x @ (self._L @ x))

    def to_dense(self) -> np.ndarray:
        return self._L.toarray() if sp.issparse(self._L) else np.array(self._L)


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float
    projection_residual: float


def solve_laplacian(L: LaplacianOperator, b, alpha: float = 1e-6,
                    max_iter: int | None = None) -> SolveResult:
    """Conjugate gradients for L x = b restricted to the complement of 1.

    ``b`` is projected to mean zero first; the removed component is reported
    as ``projection_residual``. Stops once ||b - L x|| <= alpha ||b||.
    """
    b = np.asarray(b, dtype=np.float64)
    n = L.n
    if b.shape != (n,):
        raise ContractError(f"right-hand side must have shape ({n},)")
    shift = b.mean()
    b = b - shift
    proj = abs(shift) * math.sqrt(n)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0:
        return SolveResult(x, 0, 0.0, proj)
    max_iter = 10 * n if max_iter is None else max_iter
    r = b.copy()
    p = r.copy()
    rr = r @ r
    for it in range(1, max_iter + 1):
        Ap = L.apply(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise ConvergenceError("operator not positive on the search space "
                                   "(disconnected graph?)", math.sqrt(rr) / bnorm)
        step = rr / pAp
        x += step * p
        r -= step * Ap
        r -= r.mean()
        rr_new = r @ r
        if math.sqrt(rr_new) <= alpha * bnorm:
            x -= x.mean()
            return SolveResult(x, it, math.sqrt(rr_new) / bnorm, proj)
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise ConvergenceError(f"no convergence in {max_iter} iterations",
                           math.sqrt(rr) / bnorm)


@dataclass
class ConditionReport:
    kappa: float
    bound: float
    lambda2: float
    lambda2_bound: float

    @property
    def holds(self) -> bool:
        slack = 1e-9
        return (self.kappa <= self.bound * (1 + slack)
                and self.lambda2 >= self.lambda2_bound * (1 - slack))


def condition_number_check(dataset, spec, tau: float | None = None) -> ConditionReport:
    """Extreme nonzero singular values of the weighted incidence matrix.

    Small graphs use the explicit incidence matrix. Larger ones use the
    eigenvalues of its Gram matrix, which is the Laplacian, to stay in memory.
    """
    from .reference import dense_matrix, incidence_matrix, measured_tau

    n = dataset.n
    if n > 500:
        raise ContractError("dense condition check is capped at n = 500")
    tau = measured_tau(dataset, spec) if tau is None else tau
    K = dense_matrix(dataset, spec)
    if n * (n - 1) // 2 * n <= 4_000_000:
        s = np.linalg.svd(incidence_matrix(K), compute_uv=False)
        lam = np.sort(s ** 2)
    else:
        lam = np.linalg.eigvalsh(LaplacianOperator.from_dense(K).to_dense())
    top = lam[-1]
    pos = lam[lam > 1e-10 * top]
    kappa = math.sqrt(pos[-1] / pos[0])
    return ConditionReport(kappa, 4 * math.sqrt(2) / tau ** 1.5,
                           float(lam[1]) if n > 1 else 0.0, n * tau ** 3 / 16)
