import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kdegraph import counters
from kdegraph.errors import ContractError, DataError, ParseError, UnsupportedTransformError
from kdegraph.kernels import (
    Dataset,
    KernelSpec,
    brute_min_pair_weight,
    kernel_eval,
    kernel_row,
    kernel_submatrix,
    load_dataset,
    median_pair_distance,
    pair_weights,
    save_dataset,
    squared_kernel_transform,
)

FAMILIES = ["gaussian", "exponential", "laplacian", "rational_quadratic"]
coords = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_gaussian_zero_distance_is_one():
    assert kernel_eval(KernelSpec("gaussian", 1.0), [0.3, -1.2], [0.3, -1.2]) == 1.0


def test_laplacian_unit_distance():
    v = kernel_eval(KernelSpec("laplacian", 1.0), [0.0], [1.0])
    assert v == pytest.approx(0.36787944117144233, abs=1e-15)


def test_laplacian_uses_l1_distance():
    v = kernel_eval(KernelSpec("laplacian", 2.0), [0.0, 0.0], [1.0, 1.0])
    assert v == pytest.approx(math.exp(-1.0), abs=1e-15)


def test_exponential_uses_l2_distance():
    v = kernel_eval(KernelSpec("exponential", 1.0), [0.0, 0.0], [3.0, 4.0])
    assert v == pytest.approx(math.exp(-5.0), abs=1e-15)


def test_gaussian_bandwidth():
    v = kernel_eval(KernelSpec("gaussian", 2.0), [0.0], [2.0])
    assert v == pytest.approx(math.exp(-1.0), abs=1e-15)


def test_rational_quadratic_half():
    v = kernel_eval(KernelSpec("rational_quadratic", 1.0, beta=1.0), [0.0], [1.0])
    assert v == pytest.approx(0.5, abs=1e-15)


def test_dimension_mismatch_is_input_error():
    with pytest.raises(DataError):
        kernel_eval(KernelSpec(), [0.0, 1.0], [0.0])


@pytest.mark.parametrize("kwargs", [
    {"family": "cosine"}, {"sigma": 0.0}, {"sigma": -1.0}, {"tau": 0.0}, {"tau": 1.0},
    {"family": "rational_quadratic", "beta": 0.0},
])
def test_spec_validation(kwargs):
    with pytest.raises(ContractError):
        KernelSpec(**kwargs)


def test_dataset_rejects_nonfinite_and_empty():
    with pytest.raises(DataError):
        Dataset(np.array([[0.0, np.nan]]))
    with pytest.raises(DataError):
        Dataset(np.zeros((0, 2)))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(FAMILIES), st.floats(0.1, 5.0),
       arrays(np.float64, 3, elements=coords), arrays(np.float64, 3, elements=coords))
def test_symmetry_and_range(family, sigma, x, y):
    spec = KernelSpec(family, sigma, beta=1.5)
    a = kernel_eval(spec, x, y)
    b = kernel_eval(spec, y, x)
    assert a == b
    assert 0.0 <= a <= 1.0
    if np.array_equal(x, y):
        assert a == 1.0
    elif a == 1.0:
        # only possible through underflow of a tiny distance
        assert np.abs(x - y).max() < 1e-7


@pytest.mark.parametrize("family,expected", [
    ("laplacian", 2.0), ("exponential", 2.0), ("gaussian", math.sqrt(2.0)),
])
def test_squared_transform_constant(family, expected):
    assert squared_kernel_transform(KernelSpec(family, 1.3)) == expected


@pytest.mark.parametrize("family", ["laplacian", "exponential", "gaussian"])
def test_squared_transform_identity(family, rng):
    spec = KernelSpec(family, 1.7)
    c = squared_kernel_transform(spec)
    for _ in range(100):
        x, y = rng.normal(size=(2, 3))
        assert abs(kernel_eval(spec, x, y) ** 2 - kernel_eval(spec, c * x, c * y)) <= 1e-12


def test_squared_transform_rejects_rational_quadratic():
    with pytest.raises(UnsupportedTransformError):
        squared_kernel_transform(KernelSpec("rational_quadratic", 1.0))


def test_load_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0,0\n1,0\n0,1\n")
    ds = load_dataset(p)
    assert (ds.n, ds.d) == (3, 2)
    np.testing.assert_array_equal(ds.points, [[0, 0], [1, 0], [0, 1]])


def test_load_binary(tmp_path):
    import struct

    p = tmp_path / "a.bin"
    p.write_bytes(b"KGD1" + struct.pack("<QQ", 2, 1) + struct.pack("<2d", 0.0, 1.0))
    ds = load_dataset(p, "binary-f64")
    assert (ds.n, ds.d) == (2, 1)
    np.testing.assert_array_equal(ds.points.ravel(), [0.0, 1.0])


@pytest.mark.parametrize("text", ["0,0\n1,0,2\n", "0,a\n", "", "\n\n"])
def test_malformed_csv(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ParseError):
        load_dataset(p)


def test_truncated_binary(tmp_path):
    import struct

    p = tmp_path / "bad.bin"
    p.write_bytes(b"KGD1" + struct.pack("<QQ", 3, 1) + struct.pack("<2d", 0.0, 1.0))
    with pytest.raises(ParseError):
        load_dataset(p)


@pytest.mark.parametrize("fmt", ["csv", "binary-f64"])
def test_save_load_roundtrip(tmp_path, rng, fmt):
    ds = Dataset(rng.normal(size=(7, 3)))
    p = tmp_path / "x"
    save_dataset(ds, p, fmt)
    np.testing.assert_array_equal(load_dataset(p, fmt).points, ds.points)


def test_min_pair_weight_identical_points():
    assert brute_min_pair_weight(Dataset(np.zeros((4, 2))), KernelSpec("laplacian")) == 1.0


def test_min_pair_weight_collinear():
    ds = Dataset(np.array([[0.0], [1.0], [2.0]]))
    assert brute_min_pair_weight(ds, KernelSpec("laplacian", 1.0)) == pytest.approx(math.exp(-2))


@pytest.mark.parametrize("family", FAMILIES)
def test_min_pair_weight_matches_loop(rng, family):
    ds = Dataset(rng.normal(size=(50, 2)))
    spec = KernelSpec(family, 1.5)
    pts = ds.points
    best = min(kernel_eval(spec, pts[i], pts[j]) for i in range(50) for j in range(i + 1, 50))
    assert brute_min_pair_weight(ds, spec) == pytest.approx(best, rel=1e-12)


def test_submatrix_and_pairs_agree_with_scalar(rng):
    ds = Dataset(rng.normal(size=(12, 3)))
    for family in FAMILIES:
        spec = KernelSpec(family, 0.9, beta=2.0)
        K = kernel_submatrix(ds, spec, np.arange(12))
        ref = np.array([[kernel_eval(spec, a, b) for b in ds.points] for a in ds.points])
        np.testing.assert_allclose(K, ref, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(kernel_row(ds, spec, 4), ref[4], rtol=1e-12, atol=1e-14)
        u, v = rng.integers(0, 12, 20), rng.integers(0, 12, 20)
        np.testing.assert_allclose(pair_weights(ds, spec, u, v), ref[u, v], rtol=1e-12, atol=1e-14)


def test_direct_evaluation_counters(rng):
    ds = Dataset(rng.normal(size=(10, 2)))
    spec = KernelSpec()
    with counters.track() as c:
        kernel_eval(spec, [0.0, 0.0], [1.0, 1.0])
        kernel_row(ds, spec, 0)
        kernel_submatrix(ds, spec, [1, 2, 3], [4, 5])
        pair_weights(ds, spec, [0, 1], [2, 3])
    assert c.kernel_evaluations == 1 + 10 + 6 + 2
    assert c.kde_queries == 0


def test_median_distance_exact_and_subsampled(rng):
    ds = Dataset(rng.normal(size=(400, 2)))
    exact = median_pair_distance(ds, KernelSpec())
    from scipy.spatial.distance import pdist

    assert exact == pytest.approx(np.median(pdist(ds.points)))
    approx = median_pair_distance(ds, KernelSpec(), rng, max_exact=100, pairs=50_000)
    assert approx == pytest.approx(exact, rel=0.05)
    l1 = median_pair_distance(ds, KernelSpec("laplacian"))
    assert l1 == pytest.approx(np.median(pdist(ds.points, "cityblock")))
