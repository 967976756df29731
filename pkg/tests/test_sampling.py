import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chisquare

from kdegraph import counters, synthetic
from kdegraph import reference as R
from kdegraph.errors import ContractError
from kdegraph.kde import MultiLevelKde, SamplingKde, build_multilevel
from kdegraph.kernels import Dataset, KernelSpec
from kdegraph.sampling import (
    approx_degrees,
    array_descent_probabilities,
    degree_table_from_values,
    envelope_factor,
    make_rng,
    neighbor_probabilities,
    prefix_sums,
    random_walk,
    random_walks,
    sample_edge,
    sample_edges,
    sample_from_array,
    sample_from_prefix,
    sample_neighbor,
    sample_neighbor_exact,
    sample_neighbors,
    sample_neighbors_exact,
    sample_vertex,
)

from conftest import exact_setup, measured_spec

N = 100_000


def python_descent_prob(tree, K, i, j):
    """Branch-probability product of the exact descent from i to j."""
    node, prob = 0, 1.0
    while tree.children(node) is not None:
        sums = []
        for c in tree.children(node):
            lo, hi = int(tree.lo[c]), int(tree.hi[c])
            sums.append(sum(K[i, x] for x in range(lo, hi) if x != i))
        a, b = tree.children(node)
        take = a if tree.lo[a] <= j < tree.hi[a] else b
        prob *= sums[0 if take == a else 1] / (sums[0] + sums[1])
        node = take
    return prob


# ---------------------------------------------------------------------------
# degrees


def test_degrees_identical_points():
    tree = build_multilevel(synthetic.identical(3), KernelSpec(tau=0.5))
    np.testing.assert_array_equal(approx_degrees(tree).p, [2.0, 2.0, 2.0])


def test_degrees_exact_backend_match_dense(rng):
    ds = synthetic.gaussian_cloud(100, 2, rng=3)
    spec = measured_spec(ds, "exponential", 0.5)
    tree, table, K, ex = exact_setup(ds, spec)
    np.testing.assert_allclose(table.p, ex.degrees, rtol=1e-10)
    assert np.all(np.diff(table.prefix) > 0)
    assert table.prefix[-1] == pytest.approx(ex.degrees.sum(), rel=1e-12)


def test_degrees_keep_tiny_values_exact():
    # degrees far below double precision relative to the unit self term
    ds = synthetic.gaussian_cloud(64, 2, rng=3)
    spec = measured_spec(ds, "exponential", 0.02)
    tree, table, K, ex = exact_setup(ds, spec)
    assert ex.degrees.min() < 1e-16
    assert not table.clamped.any()
    np.testing.assert_allclose(table.p, ex.degrees, rtol=1e-10)


@pytest.fixture(scope="module")
def wide2000():
    ds = synthetic.gaussian_cloud(2000, 2, rng=7)
    spec = measured_spec(ds, sigma=10.0)
    deg = R.exact_distributions(R.dense_matrix(ds, spec)).degrees
    return ds, spec, deg


def test_degrees_sampling_backend_bound(wide2000):
    ds, spec, deg = wide2000
    tree = build_multilevel(ds, spec, 0.1, "sampling")
    assert tree.oracle.r < ds.n
    slack = 0.1 + 2 * 0.1 / ((ds.n - 1) * spec.tau)
    ok = 0
    for seed in range(20):
        table = approx_degrees(tree, rng=make_rng(seed))
        ok += np.max(np.abs(table.p / deg - 1)) <= slack
    assert ok >= 19


def test_degree_clamping_warns():
    ds = synthetic.gaussian_cloud(300, 2, rng=1)
    spec = measured_spec(ds, sigma=1.0)
    orc = SamplingKde(ds, spec, 0.1, 0.01, subset_const=40 * spec.tau * 0.01 * 0.999)
    tree = MultiLevelKde(orc)
    with pytest.warns(RuntimeWarning, match="clamped"):
        table = approx_degrees(tree, rng=make_rng(0))
    floor = 0.9 * 299 * spec.tau
    assert np.all(table.p[table.clamped] == floor)
    assert table.upper_degree(int(np.flatnonzero(table.clamped)[0])) == 299.0


def test_degrees_need_two_points():
    with pytest.raises(ContractError):
        approx_degrees(build_multilevel(synthetic.gaussian_cloud(1), KernelSpec()))


# ---------------------------------------------------------------------------
# array sampling


def test_uniform_array(rng):
    freq = np.bincount(sample_from_array([1, 1, 1, 1], rng, 40_000), minlength=4) / 40_000
    assert np.all(np.abs(freq - 0.25) <= 0.02)


def test_two_entry_array(rng):
    freq = np.bincount(sample_from_array([1, 3], rng, 10_000), minlength=2) / 10_000
    assert abs(freq[0] - 0.25) <= 0.02 and abs(freq[1] - 0.75) <= 0.02


def test_random_array_tv(rng):
    a = rng.uniform(0.1, 5.0, 64)
    emp = R.empirical(sample_from_array(a, rng, N), 64)
    assert R.tv_distance(emp, a / a.sum()) <= 0.02


@pytest.mark.parametrize("bad", [[1.0, 0.0], [1.0, -2.0], [], [np.nan]])
def test_array_rejects_nonpositive(bad):
    with pytest.raises(ContractError):
        prefix_sums(bad)


class _GridUniform:
    """Stand-in generator returning an even grid of uniforms."""

    def __init__(self, m):
        self.m = m

    def random(self, size):
        return (np.arange(self.m) + 0.5) / self.m


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.integers(1, 9).map(float)))
def test_array_sampler_is_exact(a):
    # integer weights with a grid fine enough to hit every interval exactly
    m = int(a.sum()) * 64
    idx = sample_from_prefix(prefix_sums(a), _GridUniform(m), m)
    np.testing.assert_array_equal(np.bincount(idx, minlength=a.size), a * 64)
    np.testing.assert_allclose(array_descent_probabilities(a), a / a.sum(), rtol=1e-12)


# ---------------------------------------------------------------------------
# vertices


def test_vertex_identical_points_uniform(rng):
    tree = build_multilevel(synthetic.identical(10), KernelSpec())
    table = approx_degrees(tree)
    np.testing.assert_allclose(table.probs, 0.1)
    emp = R.empirical(sample_vertex(table, rng, N), 10)
    assert R.tv_distance(emp, np.full(10, 0.1)) <= 0.01


def test_vertex_exact_backend_tv():
    ds = synthetic.gaussian_cloud(200, 2, rng=5)
    spec = measured_spec(ds, "laplacian", 0.5)
    tree, table, K, ex = exact_setup(ds, spec)
    emp = R.empirical(sample_vertex(table, make_rng(1), N), 200)
    assert R.tv_distance(emp, ex.degree_dist) <= 0.02


def test_vertex_sampling_backend_tv(wide2000):
    ds, spec, deg = wide2000
    tree = build_multilevel(ds, spec, 0.1, "sampling")
    rng = make_rng(2)
    table = approx_degrees(tree, rng=rng)
    emp = R.empirical(sample_vertex(table, rng, N), ds.n)
    assert R.tv_distance(emp, deg / deg.sum()) <= 0.1 + 0.02


# ---------------------------------------------------------------------------
# neighbors


def test_neighbor_two_points():
    tree = build_multilevel(synthetic.gaussian_cloud(2), KernelSpec(tau=1e-3))
    for seed in range(5):
        s = sample_neighbor(tree, 0, make_rng(seed))
        assert s.index == 1 and s.path_prob == 1.0
        e = sample_neighbor_exact(tree, 1, make_rng(seed))
        assert e.index == 0 and e.rounds == 1


def test_neighbor_star_uniform():
    ds = synthetic.star(33)
    tree = build_multilevel(ds, KernelSpec("gaussian", 1.0, 0.01))
    b = sample_neighbors(tree, 0, N, make_rng(3))
    assert not np.any(b.index == 0)
    emp = R.empirical(b.index, 33)[1:]
    assert R.tv_distance(emp, np.full(32, 1 / 32)) <= 0.03


def test_neighbor_exact_star_chisquare():
    ds = synthetic.star(33)
    tree = build_multilevel(ds, KernelSpec("gaussian", 1.0, 0.01))
    b = sample_neighbors_exact(tree, 0, N, make_rng(4))
    counts = np.bincount(b.index, minlength=33)
    assert counts[0] == 0
    assert chisquare(counts[1:]).pvalue > 0.01


def test_neighbor_exact_backend_tv():
    ds = synthetic.gaussian_cloud(128, 2, rng=8)
    spec = measured_spec(ds, sigma=0.7)
    tree, table, K, ex = exact_setup(ds, spec)
    for i in (0, 77):
        b = sample_neighbors(tree, i, N, make_rng(i))
        assert not np.any(b.index == i)
        assert R.tv_distance(R.empirical(b.index, 128), ex.row_dist(i)) <= 0.02


def test_path_prob_telescopes():
    ds = synthetic.gaussian_cloud(45, 2, rng=9)
    spec = measured_spec(ds, "exponential", 0.8)
    tree, table, K, ex = exact_setup(ds, spec)
    for i in (0, 17, 44):
        others = np.array([j for j in range(45) if j != i])
        probs = neighbor_probabilities(tree, np.full(44, i), others)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(probs, ex.row_dist(i)[others], rtol=1e-9)
        for j in others[:6]:
            assert probs[others == j][0] == pytest.approx(python_descent_prob(tree, K, i, j),
                                                          rel=1e-12)
        b = sample_neighbors(tree, i, 50, make_rng(i))
        np.testing.assert_allclose(b.path_prob, ex.row_dist(i)[b.index], rtol=1e-9)


def test_neighbor_exact_64_noise_floor():
    ds = synthetic.gaussian_cloud(64, 2, rng=3)
    spec = measured_spec(ds, "exponential", 0.1)
    tree, table, K, ex = exact_setup(ds, spec)
    b = sample_neighbors_exact(tree, 5, N, make_rng(0), table)
    assert R.tv_distance(R.empirical(b.index, 64), ex.row_dist(5)) <= 0.01
    assert b.rounds / N <= 10 / spec.tau


def test_rejection_with_subsampled_estimates():
    # subset size forced far below n so the envelope and rejection both matter
    ds = synthetic.gaussian_cloud(64, 2, rng=3)
    spec = measured_spec(ds, "gaussian", 3.0)
    orc = SamplingKde(ds, spec, 0.1, 0.01, subset_const=12 * spec.tau * 0.01)
    tree = MultiLevelKde(orc)
    assert orc.r < 16
    env = envelope_factor(tree)
    assert env > 1.0
    ex = R.exact_distributions(R.dense_matrix(ds, spec))
    rng = make_rng(1)
    table = approx_degrees(tree, rng=rng)
    draws = 20_000
    b = sample_neighbors_exact(tree, 0, draws, rng, table)
    tv = R.tv_distance(R.empirical(b.index, 64), ex.row_dist(0))
    assert tv <= 1.5 * R.expected_tv_noise(ex.row_dist(0), draws) + 0.005
    assert b.rounds / draws <= env * table.upper_degree(0) / ex.degrees[0] * 1.1


def test_exact_backend_envelope_is_one():
    tree = build_multilevel(synthetic.gaussian_cloud(20), KernelSpec())
    assert envelope_factor(tree) == 1.0


def test_neighbor_vertex_range():
    tree = build_multilevel(synthetic.gaussian_cloud(4), KernelSpec(tau=1e-3))
    with pytest.raises(ContractError):
        sample_neighbor(tree, 4, make_rng(0))


# ---------------------------------------------------------------------------
# edges


def test_edges_equilateral_uniform():
    tree = build_multilevel(synthetic.equilateral(), KernelSpec("gaussian", 1.0, 0.3))
    table = approx_degrees(tree)
    b = sample_edges(table, tree, N, make_rng(0))
    emp = R.empirical(R.edge_index(3, b.u, b.v), 3)
    assert R.tv_distance(emp, np.full(3, 1 / 3)) <= 0.03
    np.testing.assert_allclose(b.prob, 1 / 3, rtol=1e-12)


def test_edges_exact_backend_tv_and_probs():
    ds = synthetic.gaussian_cloud(32, 2, rng=10)
    spec = measured_spec(ds, sigma=0.8)
    tree, table, K, ex = exact_setup(ds, spec)
    b = sample_edges(table, tree, N, make_rng(2))
    assert np.all(b.u != b.v)
    emp = R.empirical(R.edge_index(32, b.u, b.v), 32 * 31 // 2)
    assert R.tv_distance(emp, ex.edge_dist) <= 0.03
    # with exact sums the emission probability is exactly 2 k / (2 W)
    np.testing.assert_allclose(b.prob, ex.edge_dist[R.edge_index(32, b.u, b.v)], rtol=1e-9)
    assert np.all((b.q_uv > 0) & (b.q_uv <= 1) & (b.q_vu > 0) & (b.q_vu <= 1))


def test_edge_replay_matches_direct_descent():
    ds = synthetic.gaussian_cloud(24, 2, rng=11)
    spec = measured_spec(ds, "laplacian", 0.9)
    tree, table, K, ex = exact_setup(ds, spec)
    b = sample_edges(table, tree, 40, make_rng(5))
    for k in range(40):
        e = b[k]
        assert e.q_vu == pytest.approx(python_descent_prob(tree, K, e.v, e.u), rel=1e-12)
        assert e.q_uv == pytest.approx(python_descent_prob(tree, K, e.u, e.v), rel=1e-12)
    one = sample_edge(table, tree, make_rng(6))
    assert one.prob == pytest.approx(ex.edge_dist[R.edge_index(24, [one.u], [one.v])[0]])


# ---------------------------------------------------------------------------
# walks


def test_walk_zero_steps():
    tree = build_multilevel(synthetic.gaussian_cloud(5), KernelSpec(tau=1e-3))
    w = random_walk(tree, 3, 0, make_rng(0))
    assert w.endpoint == 3 and list(w.trace) == [3]


def test_walk_two_points_alternates():
    tree = build_multilevel(synthetic.gaussian_cloud(2), KernelSpec(tau=1e-3))
    for mode in ("approx", "exact-neighbor"):
        w = random_walk(tree, 0, 3, make_rng(1), mode)
        assert w.endpoint == 1 and list(w.trace) == [0, 1, 0, 1]


@pytest.mark.parametrize("mode", ["approx", "exact-neighbor"])
def test_walk_endpoint_tv(mode):
    ds = synthetic.gaussian_cloud(32, 2, rng=5)
    spec = measured_spec(ds, sigma=1.0)
    tree, table, K, ex = exact_setup(ds, spec)
    b = random_walks(tree, np.full(N, 3), 4, make_rng(1), mode, table)
    assert b.trace.shape == (N, 5)
    assert np.all(b.trace[:, 1:] != b.trace[:, :-1])
    assert R.tv_distance(R.empirical(b.endpoints, 32), ex.walk_endpoint(3, 4)) <= 0.03


def test_walk_chapman_kolmogorov():
    ds = synthetic.gaussian_cloud(20, 2, rng=6)
    spec = measured_spec(ds, sigma=0.9)
    tree, table, K, ex = exact_setup(ds, spec)
    b = random_walks(tree, np.full(N, 0), 3, make_rng(2), "exact-neighbor", table)
    before = R.empirical(b.trace[:, 2], 20)
    after = R.empirical(b.trace[:, 3], 20)
    pushed = ex.walk_matrix @ before
    assert R.tv_distance(after, pushed) <= 0.02


def test_walk_rejects_bad_args():
    tree = build_multilevel(synthetic.gaussian_cloud(4), KernelSpec(tau=1e-3))
    with pytest.raises(ContractError):
        random_walks(tree, [0], -1, make_rng(0))
    with pytest.raises(ContractError):
        random_walks(tree, [0], 2, make_rng(0), "lazy")


# ---------------------------------------------------------------------------
# reproducibility and threads


def test_same_seed_same_draws():
    ds = synthetic.gaussian_cloud(50, 2, rng=1)
    tree, table, K, ex = exact_setup(ds, measured_spec(ds, sigma=1.0))
    a = sample_edges(table, tree, 500, make_rng(9), threads=1)
    b = sample_edges(table, tree, 500, make_rng(9), threads=1)
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.v, b.v)


def test_threaded_draws_are_reproducible_and_correct():
    ds = synthetic.gaussian_cloud(32, 2, rng=12)
    spec = measured_spec(ds, sigma=0.8)
    tree, table, K, ex = exact_setup(ds, spec)
    a = sample_edges(table, tree, N, make_rng(3), threads=3)
    b = sample_edges(table, tree, N, make_rng(3), threads=3)
    np.testing.assert_array_equal(a.u, b.u)
    emp = R.empirical(R.edge_index(32, a.u, a.v), 32 * 31 // 2)
    assert R.tv_distance(emp, ex.edge_dist) <= 0.03


def test_sampling_counters():
    ds = synthetic.gaussian_cloud(16, 2, rng=1)
    tree, table, K, ex = exact_setup(ds, measured_spec(ds, sigma=1.0))
    with counters.track() as c:
        sample_neighbors(tree, 0, 10, make_rng(0))
    # 16 points give a depth-4 tree and two child queries per level
    assert c.kde_queries == 10 * 4 * 2
    assert c.kernel_evaluations == 0
    with counters.track() as c:
        b = sample_neighbors_exact(tree, 0, 10, make_rng(0), table)
    assert c.kernel_evaluations == b.rounds


def test_degree_table_from_values():
    t = degree_table_from_values([1.0, 3.0])
    np.testing.assert_allclose(t.probs, [0.25, 0.75])
    with pytest.raises(ContractError):
        degree_table_from_values([1.0, 0.0])
