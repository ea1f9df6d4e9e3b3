"""Target sets, snake labeling, and the visit estimators.

MC-versus-oracle checks here are intentionally small (2e4 samples, one
probe); the full bridge at acceptance scale lives in test_acceptance.
"""

import numpy as np
import pytest

from branchcap.lattice import WindowSpec, theta_preset
from branchcap.oracle import p_via_green
from branchcap.rng import stream
from branchcap.snakes import (TargetSet, count_visits, estimate_multi,
                              estimate_p, estimate_q, estimate_r, label_tree,
                              snake_visits, visit_count_profile)
from branchcap.trees import offspring_preset, sample_gw_tree
from branchcap import snakes as snakes_mod

SRW5 = theta_preset("srw5")
BINARY = offspring_preset("binary")
ORIGIN = TargetSet(np.zeros((1, 5), dtype=np.int64), name="origin")
E1 = np.array([1, 0, 0, 0, 0], dtype=np.int64)


# --- TargetSet --------------------------------------------------------------

def test_points_membership():
    pts = [[0, 0, 0, 0, 0], [2, 0, 0, 0, 0], [0, 1, 0, 0, 0]]
    t = TargetSet(pts)
    assert t.mode == "points" and t.size == 3
    assert t.contains_point([2, 0, 0, 0, 0])
    assert not t.contains_point([1, 0, 0, 0, 0])
    got = t.contains_batch(np.array([[0, 0, 0, 0, 0], [3, 0, 0, 0, 0]]))
    assert got.tolist() == [True, False]


def test_points_dedupe_and_1d():
    t = TargetSet([1, 2, 3, 4, 5])
    assert t.size == 1 and t.dim == 5
    t2 = TargetSet([[0] * 5, [0] * 5])
    assert t2.size == 1


def test_points_validation():
    with pytest.raises(ValueError):
        TargetSet(np.zeros((0, 5)))
    with pytest.raises(ValueError):
        TargetSet(np.zeros((1, 7), dtype=np.int64))    # dim > 6
    with pytest.raises(ValueError):
        # spread beyond the packed coordinate range at dim 5
        TargetSet([[0] * 5, [5000, 0, 0, 0, 0]])


def test_hull_radius():
    t = TargetSet([[-3, 0, 0, 0, 0], [3, 0, 0, 0, 0]])
    assert t.hull_radius == pytest.approx(3.0)
    assert np.array_equal(t.center, [0, 0, 0, 0, 0])


def test_annulus_membership():
    t = TargetSet.subspace_annulus(5, 2, 16, 25)
    assert t.mode == "annulus"
    assert t.contains_point([4, 0, 0, 0, 0])
    assert t.contains_point([3, 4, 0, 0, 0])
    assert not t.contains_point([4, 0, 1, 0, 0])   # off the subspace
    assert not t.contains_point([6, 0, 0, 0, 0])   # norm out of band
    with pytest.raises(ValueError):
        TargetSet.subspace_annulus(5, 0, 0, 4)
    with pytest.raises(ValueError):
        TargetSet.subspace_annulus(5, 2, 9, 4)


def test_gap_from():
    t = TargetSet([[2, 0, 0, 0, 0], [-2, 0, 0, 0, 0]])
    assert t.gap_from([6, 0, 0, 0, 0]) == pytest.approx(4.0)
    assert t.gap_from([0, 0, 0, 0, 0]) == 1.0      # floored inside the hull
    ann = TargetSet.subspace_annulus(5, 2, 16, 25)
    assert ann.gap_from([8, 0, 0, 0, 0]) == pytest.approx(3.0)
    assert ann.gap_from([1, 0, 0, 0, 0]) == pytest.approx(3.0)
    assert ann.gap_from([4, 0, 0, 0, 2]) == pytest.approx(2.0)


def test_exact_gap():
    t = TargetSet([[4, 0, 0, 0, 0], [0, 4, 0, 0, 0]])
    # nearest point is (0, 4, ...) at distance sqrt(32); the hull gap from
    # the centroid ball can only underestimate that
    assert t.exact_gap_from([-4, 0, 0, 0, 0]) == pytest.approx(np.sqrt(32.0))
    assert t.gap_from([-4, 0, 0, 0, 0]) <= np.sqrt(32.0)


def test_overlaps():
    a = TargetSet([[0] * 5, [1, 0, 0, 0, 0]])
    b = TargetSet([[1, 0, 0, 0, 0]])
    c = TargetSet([[9, 0, 0, 0, 0]])
    assert a.overlaps(b) and not a.overlaps(c)
    ann = TargetSet.subspace_annulus(5, 4, 4, 16)
    assert ann.overlaps(TargetSet([[2, 0, 0, 0, 0]]))
    assert not ann.overlaps(c)
    ann2 = TargetSet.subspace_annulus(5, 4, 17, 64)
    assert not ann.overlaps(ann2)


def test_digest_distinguishes():
    a = TargetSet([[0] * 5])
    b = TargetSet([[1, 0, 0, 0, 0]])
    assert a.digest != b.digest
    assert a.digest == TargetSet([[0] * 5]).digest


# --- labeling ---------------------------------------------------------------

def test_label_tree_steps():
    rng = stream(7, "label", 0)
    tree = sample_gw_tree(BINARY, rng, 100_000)
    while tree.n < 50:
        tree = sample_gw_tree(BINARY, rng, 100_000)
    real = label_tree(tree, SRW5, 2 * E1, rng)
    assert np.array_equal(real.labels[0], 2 * E1)
    steps = real.labels[1:] - real.labels[tree.parent[1:]]
    # every edge carries one unit step
    assert np.all(np.abs(steps).sum(axis=1) == 1)


def test_label_tree_determinism():
    t = sample_gw_tree(BINARY, stream(3, "lab-det", 1), 100_000)
    a = label_tree(t, SRW5, E1, stream(3, "lab-det", 2))
    b = label_tree(t, SRW5, E1, stream(3, "lab-det", 2))
    assert np.array_equal(a.labels, b.labels)


def test_visit_counts_match_batch():
    rng = stream(11, "visits", 0)
    tree = sample_gw_tree(BINARY, rng, 100_000)
    real = label_tree(tree, SRW5, np.zeros(5, dtype=np.int64), rng)
    t = TargetSet([[0] * 5, [1, 0, 0, 0, 0]])
    manual = int(t.contains_batch(real.labels).sum())
    assert count_visits(real, t) == manual
    assert snake_visits(real, t) == (manual > 0)


# --- estimators -------------------------------------------------------------

def test_estimate_p_inside_target():
    est = estimate_p(ORIGIN, [0] * 5, SRW5, BINARY, 500, seed=1)
    assert est.value == 1.0 and est.stderr == 0.0


def test_estimate_p_determinism():
    a = estimate_p(ORIGIN, 2 * E1, SRW5, BINARY, 5000, seed=42)
    b = estimate_p(ORIGIN, 2 * E1, SRW5, BINARY, 5000, seed=42)
    c = estimate_p(ORIGIN, 2 * E1, SRW5, BINARY, 5000, seed=43)
    assert a.value == b.value and a.stderr == b.stderr
    assert a.value != c.value


def test_estimate_p_against_oracle():
    pf = p_via_green(ORIGIN, BINARY, SRW5, WindowSpec((0,) * 5, 8.0))
    x = 2 * E1
    est = estimate_p(ORIGIN, x, SRW5, BINARY, 20_000, seed=5)
    tol = 3.0 * est.stderr + est.truncation_bias_bound + pf.deficit_at(x)
    assert abs(est.value - pf.at(x)) <= tol


def test_estimate_q_dominates_p():
    # the infinite snake contains a critical tree below the spine root
    x = 2 * E1
    p = estimate_p(ORIGIN, x, SRW5, BINARY, 20_000, seed=9)
    q = estimate_q(ORIGIN, x, SRW5, BINARY, 10_000, spine_len=128, seed=9)
    slack = 4.0 * np.hypot(p.stderr, q.stderr)
    assert q.value >= p.value - slack


def test_estimate_r_runs():
    est = estimate_r(ORIGIN, 2 * E1, SRW5, BINARY, 10_000, seed=2)
    assert 0.0 < est.value < 1.0
    assert est.params["kind"] == "r"


def test_estimate_q_adaptive_spine():
    est = estimate_q(ORIGIN, 3 * E1, SRW5, BINARY, 4000, seed=3)
    assert est.params["spine_len"] >= snakes_mod.SPINE_START
    assert est.params["stages"]


def test_truncation_reporting():
    est = estimate_p(ORIGIN, 2 * E1, SRW5, BINARY, 4000, node_cap=50, seed=8)
    assert est.params["truncated"] > 0
    assert est.truncation_bias_bound > 0.0


def test_estimate_multi_masks():
    t2 = TargetSet((2 * E1).reshape(1, -1))
    t3 = TargetSet((3 * E1).reshape(1, -1))
    ests, joint, info = estimate_multi(
        [ORIGIN, t2, t3], E1, SRW5, BINARY, snakes_mod.TREE_FINITE,
        20_000, seed=12)
    masks = info["masks"]
    assert masks.shape == (20_000,)
    for i, est in enumerate(ests):
        hits = int(((masks >> np.uint64(i)) & np.uint64(1)).sum())
        assert est.value == pytest.approx(hits / 20_000)
    both01 = int((((masks >> np.uint64(0)) & (masks >> np.uint64(1)))
                  & np.uint64(1)).sum())
    assert joint[0, 1] == both01
    assert joint[0, 1] <= min(ests[0].value, ests[1].value) * 20_000 + 1e-9


def test_visit_count_profile_monotone():
    means, stderrs, info = visit_count_profile(
        ORIGIN, [0] * 5, SRW5, BINARY, [16, 64, 128], 3000, seed=4)
    assert means.shape == (3,)
    # cumulative counts over growing spine prefixes cannot decrease
    assert means[0] <= means[1] <= means[2]
    assert np.all(stderrs > 0)
    assert means[0] >= 1.0          # the root itself sits in the target


def test_visit_count_profile_validation():
    with pytest.raises(ValueError):
        visit_count_profile(ORIGIN, [0] * 5, SRW5, BINARY, [64, 32], 100)
    with pytest.raises(ValueError):
        visit_count_profile(ORIGIN, [0] * 5, SRW5, BINARY, [], 100)
