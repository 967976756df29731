"""Kernel families, datasets, and file ingestion."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import counters
from ._core import (
    EXPONENTIAL,
    GAUSSIAN,
    LAPLACIAN,
    RATIONAL_QUADRATIC,
    kernel_block,
    kernel_pairs,
    kernel_rows,
)
from .errors import ContractError, DataError, ParseError, UnsupportedTransformError

FAMILIES = {
    "gaussian": GAUSSIAN,
    "exponential": EXPONENTIAL,
    "laplacian": LAPLACIAN,
    "rational_quadratic": RATIONAL_QUADRATIC,
}

BINARY_MAGIC = b"KGD1"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth and the declared minimum pair weight.

    Parameters
    ----------
    family : str
        One of ``gaussian``, ``exponential``, ``laplacian``,
        ``rational_quadratic``.
    sigma : float
        Bandwidth; distances are divided by it.
    tau : float
        Declared lower bound on every pairwise kernel value, in (0, 1).
    beta : float
        Exponent of the rational quadratic kernel, ignored elsewhere.
    """

    family: str = "gaussian"
    sigma: float = 1.0
    tau: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown kernel family {self.family!r}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ContractError("sigma must be positive and finite")
        if not (0.0 < self.tau < 1.0):
            raise ContractError("tau must lie in (0, 1)")
        if self.family == "rational_quadratic" and not self.beta > 0:
            raise ContractError("beta must be positive")

    @property
    def code(self) -> int:
        return FAMILIES[self.family]

    @property
    def inv_sigma(self) -> float:
        return 1.0 / self.sigma

    def args(self):
        """(family code, 1/sigma, beta) as passed to the compiled kernels."""
        return self.code, 1.0 / self.sigma, float(self.beta)

    def with_sigma(self, sigma: float) -> "KernelSpec":
        return KernelSpec(self.family, float(sigma), self.tau, self.beta)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered point set. Row order is part of the contract for trees."""

    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise DataError("points must form an n x d array with d >= 1")
        if pts.shape[0] < 1:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(pts)):
            raise DataError("points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def scaled(self, c: float) -> "Dataset":
        return Dataset(self.points * c)


def _as_point(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=np.float64))


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Single kernel value k(x, y); counts one evaluation."""
    x = _as_point(x)
    y = _as_point(y)
    if x.shape != y.shape:
        raise DataError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    counters.add(kernel_evaluations=1)
    fam, inv_s, beta = spec.args()
    return float(kernel_rows(x[None, :], y, fam, inv_s, beta)[0])


def kernel_row(dataset: Dataset, spec: KernelSpec, i: int) -> np.ndarray:
    """Row i of the kernel matrix (including the unit diagonal entry)."""
    counters.add(kernel_evaluations=dataset.n)
    fam, inv_s, beta = spec.args()
    return kernel_rows(dataset.points, dataset.points[i], fam, inv_s, beta)


def kernel_submatrix(dataset: Dataset, spec: KernelSpec, rows, cols=None) -> np.ndarray:
    """K[rows][:, cols]; ``cols=None`` means every column."""
    rows = np.asarray(rows, dtype=np.int64)
    A = dataset.points[rows]
    B = dataset.points if cols is None else dataset.points[np.asarray(cols, dtype=np.int64)]
    counters.add(kernel_evaluations=A.shape[0] * B.shape[0])
    fam, inv_s, beta = spec.args()
    return kernel_block(A, B, fam, inv_s, beta)


def pair_weights(dataset: Dataset, spec: KernelSpec, u, v) -> np.ndarray:
    """k(x_u[t], x_v[t]) for aligned index arrays."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    counters.add(kernel_evaluations=u.shape[0])
    fam, inv_s, beta = spec.args()
    return kernel_pairs(dataset.points[u], dataset.points[v], fam, inv_s, beta)


def squared_kernel_transform(spec: KernelSpec) -> float:
    """Scale c with k(x, y)**2 == k(c x, c y) for the same spec.

    Squaring the kernel doubles the exponent. For the l1 and l2 norms that
    is absorbed by scaling points by 2; the Gaussian exponent is quadratic in
    the distance so the scale is sqrt(2).
    """
    if spec.family in ("laplacian", "exponential"):
        return 2.0
    if spec.family == "gaussian":
        return math.sqrt(2.0)
    raise UnsupportedTransformError(
        "rational quadratic kernel has no point-scaling squared transform")


def brute_min_pair_weight(dataset: Dataset, spec: KernelSpec) -> float:
    """Exact minimum kernel value over distinct index pairs (O(n^2 d))."""
    n = dataset.n
    if n < 2:
        raise ContractError("need at least two points")
    fam, inv_s, beta = spec.args()
    best = 1.0
    block = max(1, 2_000_000 // n)
    for s in range(0, n, block):
        e = min(n, s + block)
        K = kernel_block(dataset.points[s:e], dataset.points, fam, inv_s, beta)
        for r in range(e - s):
            K[r, : s + r + 1] = np.inf
        best = min(best, float(K.min()))
    return min(best, 1.0)


def median_pair_distance(dataset: Dataset, spec: KernelSpec | None = None,
                         rng: np.random.Generator | None = None,
                         max_exact: int = 10_000, pairs: int = 100_000) -> float:
    """Median pairwise distance in the kernel's own metric.

    Exact for ``n <= max_exact``; above that a random subsample of index
    pairs is used.
    """
    from scipy.spatial.distance import pdist

    metric = "cityblock" if spec is not None and spec.family == "laplacian" else "euclidean"
    X = dataset.points
    n = dataset.n
    if n <= max_exact:
        return float(np.median(pdist(X, metric=metric)))
    rng = np.random.default_rng(0) if rng is None else rng
    i = rng.integers(0, n, pairs)
    j = rng.integers(0, n - 1, pairs)
    j = j + (j >= i)
    diff = X[i] - X[j]
    if metric == "cityblock":
        dist = np.abs(diff).sum(axis=1)
    else:
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return float(np.median(dist))


# ---------------------------------------------------------------------------
# file formats


def load_dataset(path, format: str | None = None) -> Dataset:
    """Read a CSV (no header) or ``KGD1`` binary file.

    The format is inferred from the magic bytes when not given.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if format is None:
        format = "binary-f64" if raw[:4] == BINARY_MAGIC else "csv"
    if format == "csv":
        return _parse_csv(raw.decode("utf-8", errors="replace"), path)
    if format in ("binary-f64", "binary"):
        return _parse_binary(raw, path)
    raise ParseError(f"unknown dataset format {format!r}")


def _parse_csv(text: str, path) -> Dataset:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ParseError(
                f"{path}:{lineno}: expected {width} fields, found {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    try:
        return Dataset(np.array(rows))
    except DataError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _parse_binary(raw: bytes, path) -> Dataset:
    if len(raw) < 20 or raw[:4] != BINARY_MAGIC:
        raise ParseError(f"{path}: missing KGD1 header")
    n, d = struct.unpack("<QQ", raw[4:20])
    if n == 0 or d == 0:
        raise ParseError(f"{path}: empty dataset")
    need = 20 + 8 * n * d
    if len(raw) != need:
        raise ParseError(f"{path}: payload is {len(raw) - 20} bytes, header implies {need - 20}")
    data = np.frombuffer(raw, dtype="<f8", offset=20).reshape(n, d)
    try:
        return Dataset(data.copy())
    except DataError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_dataset(dataset: Dataset, path, format: str = "csv") -> None:
    path = Path(path)
    if format == "csv":
        np.savetxt(path, dataset.points, delimiter=",", fmt="%.17g")
    elif format in ("binary-f64", "binary"):
        header = BINARY_MAGIC + struct.pack("<QQ", dataset.n, dataset.d)
        path.write_bytes(header + dataset.points.astype("<f8").tobytes())
    else:
        raise ContractError(f"unknown dataset format {format!r}")
