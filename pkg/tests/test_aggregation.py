import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saic import aggregation as agg
from saic import qcore
from saic.gridworld import GridSpec

from reference import brute_kmedian_cost

SPEC8 = GridSpec(n=8, goal=21)


@pytest.fixture(scope="module")
def oracle8():
    v, _, qsa = qcore.value_iteration(SPEC8, 0.9)
    return v, qsa


# --- Partition -----------------------------------------------------------

def test_partition_validation():
    with pytest.raises(ValueError):
        agg.Partition(np.array([0, 2]), np.zeros(2))
    with pytest.raises(ValueError):
        agg.Partition(np.array([0, 1]), np.zeros(1))
    p = agg.Partition.identity(4)
    assert p.k == 4 and list(p.members(2)) == [2]
    assert agg.Partition.single(5).k == 1


# --- marginal value ------------------------------------------------------

def test_marginal_point_mass(oracle8):
    _, qsa = oracle8
    p = np.zeros(64)
    p[22] = 1.0
    v = agg.marginal_value(qsa, p)
    np.testing.assert_array_equal(v, qsa[:, 22].reshape(64, -1).max(axis=1))


def test_marginal_zero_q():
    p = agg.reset_distribution(GridSpec(n=3, goal=8))
    assert (agg.marginal_value(np.zeros((9, 9, 5, 5)), p) == 0).all()


def test_marginal_matches_hand_sum():
    spec = GridSpec(n=3, goal=8)
    v, _, qsa = qcore.value_iteration(spec, 0.9)
    got = agg.marginal_value(qsa, agg.reset_distribution(spec))
    for oi in range(9):
        hand = sum(v[oi, oj] for oj in range(8)) / 8
        assert got[oi] == pytest.approx(hand, abs=1e-12)


def test_marginal_rejects_bad_distribution():
    with pytest.raises(ValueError):
        agg.marginal_value(np.zeros((3, 3, 5, 5)), [0.5, 0.6, -0.1])
    with pytest.raises(ValueError):
        agg.marginal_value(np.zeros((3, 3, 5, 5)), [0.5, 0.4, 0.0])


# --- k-median ------------------------------------------------------------

def test_kmedian_all_equal():
    p = agg.kmedian_1d([3.0] * 6, 4)
    assert p.k == 1 and agg.kmedian_cost([3.0] * 6, p) == 0


def test_kmedian_separable():
    p = agg.kmedian_1d([0, 10, 0, 10], 2)
    assert list(p.assignment) == [0, 1, 0, 1] and agg.kmedian_cost([0, 10, 0, 10], p) == 0


def test_kmedian_eight_values_brute_force():
    vals = [0.3, 7.1, 2.2, 2.0, 9.5, 4.4, 4.0, 8.8]
    p = agg.kmedian_1d(vals, 3)
    assert agg.kmedian_cost(vals, p) == pytest.approx(brute_kmedian_cost(vals, 3), abs=1e-12)


def test_kmedian_even_cluster_midpoint():
    p = agg.kmedian_1d([0.0, 10.0], 1)
    assert p.centers[0] == 5.0 and agg.epsilon_of_partition([0.0, 10.0], p) == 10.0


def test_kmedian_rejects_bad_input():
    with pytest.raises(ValueError):
        agg.kmedian_1d([1.0], 0)
    with pytest.raises(ValueError):
        agg.kmedian_1d([], 2)
    with pytest.raises(ValueError):
        agg.value_partition([1.0], -1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=8), st.integers(1, 3))
def test_kmedian_optimal_on_integers(vals, k):
    p = agg.kmedian_1d(vals, k)
    assert agg.kmedian_cost(vals, p) == brute_kmedian_cost(vals, k)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=30), st.integers(1, 8))
def test_partition_is_disjoint_cover(vals, k):
    p = agg.kmedian_1d(vals, k)
    x = np.asarray(vals)
    assert p.assignment.shape == (len(vals),) and p.k <= k
    sizes = [len(p.members(j)) for j in range(p.k)]
    assert sum(sizes) == len(vals) and min(sizes) >= 1
    # equal values share a cluster; ids ascend with value
    for j in range(p.k - 1):
        assert x[p.members(j)].max() < x[p.members(j + 1)].min()
    # cost-uniformity certificate
    eps = agg.epsilon_of_partition(vals, p)
    for j in range(p.k):
        assert np.all(np.abs(x[p.members(j)] - p.centers[j]) <= eps / 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=20))
def test_epsilon_matches_exhaustive_scan(vals):
    p = agg.kmedian_1d(vals, 3)
    scan = 0.0
    for j in range(p.k):
        for o in p.members(j):
            scan = max(scan, 2 * abs(vals[o] - p.centers[j]))
    assert agg.epsilon_of_partition(vals, p) == scan


def test_epsilon_singletons_zero():
    assert agg.epsilon_of_partition([1.0, 2.0, 3.0], agg.kmedian_1d([1.0, 2.0, 3.0], 3)) == 0.0


# --- bound, entropy, ratio ---------------------------------------------

def test_return_gap_bound_examples():
    assert agg.return_gap_bound(0.0, 0.9) == 0.0
    assert agg.return_gap_bound(1.0, 0.9) == pytest.approx(200.0)
    assert agg.return_gap_bound(0.05, 0.5) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        agg.return_gap_bound(1.0, 1.0)
    with pytest.raises(ValueError):
        agg.return_gap_bound(-1.0, 0.5)


def test_entropy_examples():
    assert agg.entropy(np.full(64, 1 / 64)) == pytest.approx(6.0)
    assert agg.entropy([0.0, 1.0, 0.0]) == 0.0
    h = agg.entropy(agg.reset_distribution(SPEC8))
    assert h == pytest.approx(math.log2(63)) and math.ceil(h) == 6


def test_compression_ratio_examples():
    p = agg.reset_distribution(SPEC8)
    assert agg.compression_ratio(p, np.full(4, 0.25)) == (6, 2)
    assert agg.format_ratio(agg.compression_ratio(p, p)) == "6:6"
    q = np.full(36, 1 / 36)
    assert agg.compression_ratio(q, np.full(4, 0.25)) == (6, 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 3), st.lists(st.floats(0.01, 1), min_size=9, max_size=9),
       st.integers(0, 2 ** 31 - 1))
def test_message_entropy_within_rate(rate, weights, seed):
    p = np.asarray(weights) / sum(weights)
    vals = np.random.default_rng(seed).normal(size=9)
    part = agg.value_partition(vals, rate)
    msg = agg.message_distribution(part.assignment, p)
    assert agg.entropy(msg) <= rate + 1e-12


# --- aggregated value ----------------------------------------------------

def test_aggregated_value_identity(oracle8):
    v, _ = oracle8
    ident = np.arange(64)
    cond = agg.conditional_from_marginal(ident, agg.reset_distribution(SPEC8))
    # the goal's own message has zero mass: uniform over its one cell
    np.testing.assert_allclose(agg.aggregated_value(v, ident, cond), v, atol=0)


def test_aggregated_value_pair_mean():
    v = np.arange(9, dtype=float).reshape(3, 3)
    a = np.array([0, 0, 1])
    cond = np.array([[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
    out = agg.aggregated_value(v, a, cond)
    np.testing.assert_allclose(out[:, 0], (v[:, 0] + v[:, 1]) / 2)
    np.testing.assert_allclose(out[:, 1], v[:, 2])
    with pytest.raises(ValueError):
        agg.aggregated_value(v, a, np.array([[0.5, 0.0, 0.5], [0.0, 0.0, 1.0]]))


def test_aggregated_value_four_levels(oracle8):
    v, qsa = oracle8
    p = agg.reset_distribution(SPEC8)
    part = agg.value_partition(agg.marginal_value(qsa, p), 2)
    out = agg.aggregated_value(v, part.assignment, agg.conditional_from_marginal(part.assignment, p))
    assert v[20, 22] == pytest.approx(10.0)
    assert len(np.unique(np.round(out[20], 9))) == 4


# --- Lloyd ---------------------------------------------------------------

def test_lloyd_single_level():
    spec = GridSpec(n=4, goal=0)
    pts = agg.grid_points(spec)
    w = np.random.default_rng(0).random(16)
    w /= w.sum()
    p = agg.lloyd_quantize(pts, w, 1, np.random.default_rng(1))
    assert p.k == 1
    np.testing.assert_allclose(p.centers[0], (w[:, None] * pts).sum(axis=0))


def test_lloyd_separates_corners():
    spec = GridSpec(n=8, goal=0)
    pts = agg.grid_points(spec)
    w = np.zeros(64)
    for r0, c0 in ((0, 0), (0, 6), (6, 0), (6, 6)):
        for dr in (0, 1):
            for dc in (0, 1):
                w[(r0 + dr) * 8 + c0 + dc] = 1
    w /= w.sum()
    p = agg.lloyd_quantize(pts, w, 4, np.random.default_rng(0), restarts=10)
    for r0, c0 in ((0, 0), (0, 6), (6, 0), (6, 6)):
        block = {p.assignment[(r0 + dr) * 8 + c0 + dc] for dr in (0, 1) for dc in (0, 1)}
        assert len(block) == 1
    assert p.k == 4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
def test_lloyd_cost_never_increases(seed, k):
    rng = np.random.default_rng(seed)
    w = rng.random(64)
    w /= w.sum()
    _, hist = agg.lloyd_quantize(agg.grid_points(SPEC8), w, k, rng, return_history=True)
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_lloyd_restarts_keep_best():
    w = np.random.default_rng(5).random(64)
    w /= w.sum()
    pts = agg.grid_points(SPEC8)

    def cost(p):
        return agg.lloyd_cost(pts, w, p.assignment, p.centers)

    best = cost(agg.lloyd_quantize(pts, w, 4, np.random.default_rng(9), restarts=100))
    rng = np.random.default_rng(9)
    singles = [cost(agg.lloyd_quantize(pts, w, 4, rng)) for _ in range(100)]
    assert best == min(singles)


def test_lloyd_two_by_two_brute_force():
    spec = GridSpec(n=2, goal=0)
    pts = agg.grid_points(spec)
    w = np.array([0.1, 0.2, 0.3, 0.4])
    opt = np.inf
    for labels in np.ndindex(*(2,) * 4):
        lab = np.array(labels)
        cents = np.array([(w[lab == j, None] * pts[lab == j]).sum(0) / w[lab == j].sum()
                          if (lab == j).any() else [0, 0] for j in range(2)])
        opt = min(opt, agg.lloyd_cost(pts, w, lab, cents))
    p = agg.lloyd_quantize(pts, w, 2, np.random.default_rng(0), restarts=20)
    got = agg.lloyd_cost(pts, w, p.assignment, p.centers)
    assert got >= opt - 1e-12 and got == pytest.approx(opt)


# --- CSV -----------------------------------------------------------------

def test_grid_csv_round_trip(tmp_path):
    spec = GridSpec(n=4, goal=5)
    a = np.arange(16) % 3
    agg.write_grid_csv(tmp_path / "p.csv", a, spec)
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "0,1,2,0"  # top grid row: cells 12..15
    np.testing.assert_array_equal(agg.read_grid_csv(tmp_path / "p.csv", int), a)
