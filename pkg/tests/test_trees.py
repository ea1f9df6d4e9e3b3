"""Offspring laws and the finite / infinite tree samplers.

Distributional checks run a few thousand draws and test empirical
frequencies at four sigma; structural checks (preorder, spine wiring,
degree bookkeeping) are exact.
"""

import numpy as np
import pytest

from branchcap.errors import (BadProbabilities, NotCritical, ZeroVariance)
from branchcap.rng import stream
from branchcap.trees import (adjoint_distribution, dfs_traversal,
                             offspring_preset, sample_adjoint_tree,
                             sample_gw_tree, sample_infinite_tree,
                             sample_kesten_tree, size_biased_total,
                             validate_offspring)

BINARY = offspring_preset("binary")
GEOM = offspring_preset("geometric")


def rng_for(label, i=0):
    return stream(1234, label, i)


# --- offspring laws ---------------------------------------------------------

def test_binary_moments():
    assert np.array_equal(BINARY.pmf, [0.5, 0.0, 0.5])
    assert BINARY.mean == pytest.approx(1.0)
    assert BINARY.variance == pytest.approx(1.0)
    assert BINARY.third_moment == pytest.approx(4.0)


def test_geometric_moments():
    assert GEOM.mean == pytest.approx(1.0, abs=1e-12)
    assert GEOM.variance == pytest.approx(2.0, abs=1e-10)
    assert GEOM.pmf.size == 51


def test_validate_offspring_rejects():
    with pytest.raises(BadProbabilities):
        validate_offspring([0.5, 0.6])
    with pytest.raises(BadProbabilities):
        validate_offspring([])
    with pytest.raises(NotCritical):
        validate_offspring([0.25, 0.25, 0.25, 0.25])
    with pytest.raises(ZeroVariance):
        validate_offspring([0.0, 1.0])


def test_adjoint_binary():
    adj = adjoint_distribution(BINARY)
    # tail sums of (1/2, 0, 1/2) are (1/2, 1/2): a fair coin on {0, 1}
    assert np.allclose(adj.pmf, [0.5, 0.5])
    assert adj.mean == pytest.approx(BINARY.variance / 2.0)


def test_adjoint_mass_is_mean():
    # sum_i mu~(i) = sum_j j mu(j), so criticality makes it a probability law
    for mu in (BINARY, GEOM):
        adj = adjoint_distribution(mu)
        assert adj.pmf.sum() == pytest.approx(mu.mean, abs=1e-12)
        assert adj.mean == pytest.approx(mu.variance / 2.0, abs=1e-10)


def test_size_biased_binary():
    # n mu(n) puts all mass on n = 2: spine vertices always see degree two
    sb = size_biased_total(BINARY)
    assert np.allclose(sb, [0.0, 1.0])


# --- finite trees -----------------------------------------------------------

def test_gw_tree_structure():
    rng = rng_for("gw-structure")
    for _ in range(200):
        t = sample_gw_tree(BINARY, rng, node_cap=10_000)
        assert t.parent[0] == -1
        assert np.all(t.parent[1:] < np.arange(1, t.n))
        if not t.truncated:
            assert t.n_children.sum() == t.n - 1
            # binary trees have odd size
            assert t.n % 2 == 1


def test_gw_tree_size_law():
    rng = rng_for("gw-sizes")
    sizes = np.array([sample_gw_tree(BINARY, rng, 100_000).n
                      for _ in range(20_000)])
    # P(|T| = 1) = mu(0), P(|T| = 3) = mu(2) mu(0)^2
    for size, prob in ((1, 0.5), (3, 0.125), (5, 0.0625)):
        frac = np.mean(sizes == size)
        sd = np.sqrt(prob * (1 - prob) / sizes.size)
        assert abs(frac - prob) < 4 * sd, (size, frac, prob)


def test_gw_tree_cap():
    rng = rng_for("gw-cap")
    seen_cap = False
    for _ in range(500):
        t = sample_gw_tree(BINARY, rng, node_cap=64)
        assert t.n <= 64
        if t.truncated:
            seen_cap = True
            assert t.n == 64
    assert seen_cap


def test_adjoint_tree_root_law():
    rng = rng_for("adjoint-root")
    roots = np.array([sample_adjoint_tree(BINARY, rng, 10_000).n_children[0]
                      for _ in range(4000)])
    frac = np.mean(roots == 1)
    assert abs(frac - 0.5) < 4 * np.sqrt(0.25 / roots.size)


def test_children_of_matches_counts():
    rng = rng_for("children")
    t = sample_gw_tree(GEOM, rng, node_cap=50_000)
    while t.n < 30:
        t = sample_gw_tree(GEOM, rng, node_cap=50_000)
    for v in range(t.n):
        kids = t.children_of(v)
        assert np.all(t.parent[kids] == v)
        if not t.truncated:
            assert kids.size == t.n_children[v]


def test_dfs_traversal_preorder():
    rng = rng_for("dfs")
    t = sample_gw_tree(BINARY, rng, node_cap=50_000)
    while t.n < 20:
        t = sample_gw_tree(BINARY, rng, node_cap=50_000)
    order = dfs_traversal(t)
    assert order[0] == t.root
    assert np.array_equal(np.sort(order), np.arange(t.n))
    seen = np.zeros(t.n, dtype=bool)
    for v in order:
        if v != t.root:
            assert seen[t.parent[v]]
        seen[v] = True


# --- spine trees ------------------------------------------------------------

def test_infinite_tree_spine():
    rng = rng_for("infinite")
    t = sample_infinite_tree(BINARY, 64, rng, bush_cap=500)
    assert t.spine is not None and t.spine.size == 64
    assert t.parent[t.spine[0]] == -1
    # consecutive spine vertices are parent and child
    assert np.all(t.parent[t.spine[1:]] == t.spine[:-1])
    # the spine child is the youngest: no later sibling under the same parent
    for a, b in zip(t.spine[:-1], t.spine[1:]):
        sibs = t.children_of(a)
        assert sibs[-1] == b


def test_infinite_tree_adjoint_degrees():
    rng = rng_for("infinite-deg")
    t = sample_infinite_tree(BINARY, 400, rng, bush_cap=200)
    deg = t.n_children[t.spine[:-1]]
    # nb + 1 with nb a fair coin: degrees 1 or 2 roughly evenly
    assert set(np.unique(deg)) <= {1, 2}
    frac = np.mean(deg == 2)
    assert abs(frac - 0.5) < 4 * np.sqrt(0.25 / deg.size)


def test_kesten_tree_binary_degrees():
    rng = rng_for("kesten")
    t = sample_kesten_tree(BINARY, 128, rng, bush_cap=500)
    assert t.spine.size == 128
    assert np.all(t.parent[t.spine[1:]] == t.spine[:-1])
    # size-biased binary degree is always two; the terminal vertex drops
    # its spine slot
    assert np.all(t.n_children[t.spine[:-1]] == 2)
    assert t.n_children[t.spine[-1]] == 1
    assert np.all(t.parent[1:] < np.arange(1, t.n))


def test_kesten_spine_slot_roughly_uniform():
    rng = rng_for("kesten-slot")
    elder = []
    for _ in range(300):
        t = sample_kesten_tree(BINARY, 40, rng, bush_cap=200)
        for a, b in zip(t.spine[:-1], t.spine[1:]):
            kids = t.children_of(a)
            elder.append(int(np.where(kids == b)[0][0]))
    elder = np.array(elder)
    # binary: slot 0 or 1 with equal probability
    frac = np.mean(elder == 0)
    assert abs(frac - 0.5) < 4 * np.sqrt(0.25 / elder.size)


def test_sampler_determinism():
    a = sample_kesten_tree(GEOM, 50, rng_for("det", 7), bush_cap=300)
    b = sample_kesten_tree(GEOM, 50, rng_for("det", 7), bush_cap=300)
    c = sample_kesten_tree(GEOM, 50, rng_for("det", 8), bush_cap=300)
    assert np.array_equal(a.parent, b.parent)
    assert np.array_equal(a.n_children, b.n_children)
    assert not (a.n == c.n and np.array_equal(a.parent, c.parent))


def test_spine_len_validation():
    with pytest.raises(ValueError):
        sample_infinite_tree(BINARY, 0, rng_for("bad"), bush_cap=10)
    with pytest.raises(ValueError):
        sample_gw_tree(BINARY, rng_for("bad"), node_cap=0)
