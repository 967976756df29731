"""Low-rank approximation, top eigenpair, and spectrum estimation."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .errors import ContractError
from .kde import MultiLevelKde, make_oracle
from .kernels import Dataset, KernelSpec, kernel_submatrix, squared_kernel_transform
from .sampling import DegreeTable, make_rng, random_walks, sample_from_prefix

ROWS_PER_RANK = 25
# rows = ceil(ROWS_CONST * k / eps) when eps is given; eps = 0.05 gives 25 k
ROWS_CONST = 1.25
COLUMNS_CONST = 1.25


@dataclass
class LraFactors:
    """B = V @ U with U having orthonormal rows."""

    U: np.ndarray
    V: np.ndarray
    k: int
    s: int
    rows: np.ndarray
    row_norms_sq: np.ndarray
    method: str = "sketch"

    def approx(self) -> np.ndarray:
        return self.V @ self.U


def row_norm_estimates(dataset: Dataset, spec: KernelSpec, backend: str = "sampling",
                       eps: float = 0.1, delta: float = 0.01, rng=None):
    """Squared row norms of K through KDE queries on the scaled points.

    Scaling points by the squared-kernel constant c turns sum_j k(x_i, x_j)^2
    into an ordinary kernel sum, so one query per row suffices. The minimum
    pair weight of the squared kernel is tau^2.
    """
    c = squared_kernel_transform(spec)
    scaled = dataset.scaled(c)
    spec_sq = KernelSpec(spec.family, spec.sigma, spec.tau ** 2, spec.beta)
    oracle = make_oracle(scaled, spec_sq, backend, eps, delta)
    vals, _ = oracle.query_many(scaled.points, make_rng(rng))
    return vals


def lra_additive(dataset: Dataset, spec: KernelSpec, k: int, eps: float | None = None,
                 rng=None, rows: int | None = None, backend: str = "sampling",
                 kde_eps: float = 0.1, delta: float = 0.01, v_method: str = "sketch",
                 columns: int | None = None) -> LraFactors:
    """Rank-k approximation from rows sampled by squared norm.

    ``v_method`` picks how the left factor is fitted once U is known:

    * ``sketch`` reuses the sampled rows. K is symmetric, so they are also
      sampled columns, and V solves the importance-weighted least squares on
      them with no extra kernel evaluations.
    * ``columns`` materializes uniformly sampled columns and solves on those.
    * ``dense`` projects the full matrix, V = K U^T (quadratic; tests only).
    """
    if k < 1:
        raise ContractError("rank must be at least 1")
    rng = make_rng(rng)
    n = dataset.n
    if rows is None:
        rows = ROWS_PER_RANK * k if eps is None else math.ceil(ROWS_CONST * k / eps)
    norms = row_norm_estimates(dataset, spec, backend, kde_eps, delta, rng)
    norms = np.maximum(norms, 1.0)  # the diagonal alone contributes 1
    prefix = np.cumsum(norms)
    probs = norms / prefix[-1]
    draws = sample_from_prefix(prefix, rng, rows)
    J, counts = np.unique(draws, return_counts=True)
    R = kernel_submatrix(dataset, spec, J)
    # duplicate draws collapse into one row scaled by sqrt(multiplicity)
    scale = np.sqrt(counts / (rows * probs[J]))
    S = R * scale[:, None]
    _, sv, Vt = np.linalg.svd(S, full_matrices=False)
    kk = min(k, Vt.shape[0])
    U = Vt[:kk]
    if kk < k:
        U = _complete_rows(U, k, n, rng)
    if v_method == "sketch":
        V = (S.T) @ np.linalg.pinv(U[:, J] * scale[None, :])
    elif v_method == "columns":
        m = columns if columns is not None else math.ceil(
            COLUMNS_CONST * k / (eps if eps is not None else 0.05))
        C = np.unique(rng.integers(0, n, min(m, n)))
        KC = kernel_submatrix(dataset, spec, C).T
        V = KC @ np.linalg.pinv(U[:, C])
    elif v_method == "dense":
        V = kernel_submatrix(dataset, spec, np.arange(n)) @ U.T
    else:
        raise ContractError(f"unknown v_method {v_method!r}")
    return LraFactors(U, V, k, rows, J, norms, v_method)


def _complete_rows(U, k, n, rng):
    # pad with random orthonormal directions when fewer than k rows were drawn
    extra = rng.standard_normal((k - U.shape[0], n))
    extra -= (extra @ U.T) @ U
    q, _ = np.linalg.qr(extra.T)
    return np.vstack([U, q.T])


# ---------------------------------------------------------------------------
# top eigenvalue


@dataclass
class EigEstimate:
    lambda_hat: float
    support: np.ndarray
    values: np.ndarray
    t: int
    iterations: int
    dense_fallback: bool = False

    def vector(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.support] = self.values
        return out


def _fix_sign(v):
    j = int(np.argmax(np.abs(v)))
    return -v if v[j] < 0 else v


def power_iteration(A: np.ndarray, iterations: int, rng, renorm_every: int = 1):
    """Plain power method from a Gaussian start; returns (rayleigh, vector)."""
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    for it in range(iterations):
        v = A @ v
        if (it + 1) % renorm_every == 0 or it == iterations - 1:
            nv = np.linalg.norm(v)
            if nv == 0:
                break
            v /= nv
    v = _fix_sign(v)
    return float(v @ (A @ v)), v


def top_eigenvalue(dataset: Dataset, spec: KernelSpec, eps: float, tau: float | None = None,
                   rng=None, sample_const: float = 1.0, iter_const: float = 1.0) -> EigEstimate:
    """Top eigenvalue of K from a uniformly sampled principal submatrix.

    The t x t block (diagonal included) is materialized explicitly, its top
    eigenpair found by power iteration, and the eigenvalue scaled by n/t.
    """
    if not (0 < eps < 1):
        raise ContractError("eps must lie in (0, 1)")
    tau = spec.tau if tau is None else tau
    rng = make_rng(rng)
    n = dataset.n
    t = int(math.ceil(sample_const / (eps * eps * tau * tau)))
    iters = int(math.ceil(iter_const * math.log(max(t, 2) / eps) / math.sqrt(eps)))
    if t > n:
        warnings.warn(f"subset size {t} exceeds n = {n}; using the full matrix",
                      RuntimeWarning, stacklevel=2)
        K = kernel_submatrix(dataset, spec, np.arange(n))
        vals, vecs = np.linalg.eigh(K)
        v = _fix_sign(vecs[:, -1])
        return EigEstimate(float(vals[-1]), np.arange(n), v, n, 0, True)
    S = np.sort(rng.choice(n, size=t, replace=False))
    KS = kernel_submatrix(dataset, spec, S, S)
    lam, v = power_iteration(KS, iters, rng)
    return EigEstimate(n / t * lam, S, v, t, iters)


# ---------------------------------------------------------------------------
# spectrum via walk-return moments


@dataclass
class MomentEstimate:
    moments: np.ndarray
    walks: int
    rounds: int


def spectral_moments(tree: MultiLevelKde, table: DegreeTable, max_len: int, walks: int,
                     rng=None, threads=None) -> MomentEstimate:
    """Return probabilities of uniform-start walks, for lengths 1..max_len.

    The probability that an l-step walk from a uniform start is back at its
    start equals tr(M^l)/n for the walk matrix M.
    """
    if max_len < 1:
        raise ContractError("need at least one moment")
    rng = make_rng(rng)
    starts = rng.integers(0, tree.n, walks)
    batch = random_walks(tree, starts, max_len, rng, mode="exact-neighbor",
                         table=table, threads=threads)
    hits = batch.trace[:, 1:] == batch.trace[:, :1]
    return MomentEstimate(hits.mean(axis=0), walks, batch.rounds)


@dataclass
class SpectrumSummary:
    lambda_tilde: np.ndarray
    grid: np.ndarray
    grid_weights: np.ndarray
    moment_residual: float
    projected: bool = False
    notes: list = field(default_factory=list)


def spectrum_emd(moments, n: int, grid_size: int | None = None,
                 eps_target: float = 0.01, simplex_weight: float = 1e3) -> SpectrumSummary:
    """Fit a distribution on [-1, 1] to walk moments; map to Laplacian values.

    Nonnegative least squares over grid atoms matches the given moments, with
    a heavily weighted extra row pinning total mass to one. The fitted walk
    eigenvalue law mu becomes 1 - mu on the normalized Laplacian, and ``n``
    evenly spaced quantiles of it are returned in descending order.
    """
    m = np.asarray(moments, dtype=np.float64)
    grid_size = grid_size or int(math.ceil(2.0 / eps_target)) + 1
    grid = np.linspace(-1.0, 1.0, grid_size)
    powers = np.arange(1, m.shape[0] + 1)
    A = grid[None, :] ** powers[:, None]
    A_aug = np.vstack([A, simplex_weight * np.ones(grid_size)])
    b_aug = np.concatenate([m, [simplex_weight]])
    w, _ = nnls(A_aug, b_aug, maxiter=50 * grid_size)
    notes = []
    total = w.sum()
    projected = abs(total - 1.0) > 1e-6
    if total <= 0:
        raise ContractError("moment fit returned no mass")
    if projected:
        notes.append(f"renormalized mass {total:.6g} to 1")
    w = w / total
    residual = float(np.linalg.norm(A @ w - m))
    if residual > 1e-3:
        notes.append(f"moments infeasible up to residual {residual:.3g}; "
                     "returning the nearest fit")
        projected = True
    lam_grid = 1.0 - grid
    order = np.argsort(lam_grid)
    cdf = np.cumsum(w[order])
    q = (np.arange(n) + 0.5) / n
    pos = np.minimum(np.searchsorted(cdf, q, side="left"), grid_size - 1)
    values = np.clip(lam_grid[order][pos], 0.0, 2.0)
    return SpectrumSummary(np.sort(values)[::-1], grid, w, residual, projected, notes)


def emd_1d(a, b, normalized: bool = False) -> float:
    """Earth mover distance between equal-size multisets of reals."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ContractError("multisets must have equal size")
    d = float(np.abs(a - b).sum())
    return d / a.shape[0] if normalized else d
