"""Fixed-point fields, killed Green identities, and field exports.

One cross-check worth flagging: for the binary offspring law the two visit
fields obey p = 2 r (1 - r) off the target exactly (eliminate the one-child
miss probability from the two one-step closures), which pins the solver
against a closed form no iteration detail can fake.
"""

import numpy as np
import pytest

from branchcap.errors import (ConfigError, MarginTooSmall,
                              StepOutsideSupport, WindowTooSmall)
from branchcap.lattice import WindowSpec, theta_preset
from branchcap.oracle import (check_first_visit, convolved_sum_check,
                              field_summary, green_column_field, green_killed,
                              green_killed_with_deficit, harmonic_measure,
                              killing_field, occupation_pathsum, p_via_green,
                              path_weight, q_via_green_with_deficit,
                              read_field, restriction_ratio,
                              solve_visit_fixpoint, solve_visit_radiation,
                              write_field)
from branchcap.snakes import TargetSet
from branchcap.trees import offspring_preset

SRW5 = theta_preset("srw5")
BINARY = offspring_preset("binary")
ORIGIN = TargetSet(np.zeros((1, 5), dtype=np.int64), name="origin")
W8 = WindowSpec((0,) * 5, 8.0)
E1 = np.array([1, 0, 0, 0, 0], dtype=np.int64)


@pytest.fixture(scope="module")
def origin_fields():
    return solve_visit_fixpoint(ORIGIN, BINARY, SRW5, W8)


# --- fixed point -----------------------------------------------------------

def test_p_basics(origin_fields):
    p, r = origin_fields
    assert p.at([0] * 5) == 1.0
    assert r.at([0] * 5) == 1.0
    assert p.values.min() >= 0.0 and p.values.max() <= 1.0
    assert p.deficit > 0.0
    # monotone decay away from the target along the axis
    vals = [p.at((k * E1)) for k in (1, 2, 3, 4)]
    assert vals[0] > vals[1] > vals[2] > vals[3] > 0.0


def test_binary_closed_form(origin_fields):
    p, r = origin_fields
    off = ~ORIGIN.contains_batch(p.lattice.coords)
    lhs = p.values[off]
    rr = r.values[off]
    assert np.max(np.abs(lhs - 2.0 * rr * (1.0 - rr))) < 1e-9


def test_p_equals_green_sum(origin_fields):
    p, _ = origin_fields
    gf = p_via_green(ORIGIN, BINARY, SRW5, W8)
    assert np.max(np.abs(p.values - gf.values)) < 1e-8


def test_killing_field_matches_r(origin_fields):
    _, r = origin_fields
    k = killing_field(ORIGIN, BINARY, SRW5, W8)
    assert k.tag == "killing"
    assert np.array_equal(k.values, r.values)


def test_radiation_between_closures(origin_fields):
    p_lo, _ = origin_fields
    p_rad, r_rad = solve_visit_radiation(ORIGIN, BINARY, SRW5, W8)
    assert np.all(p_rad.values >= p_lo.values - 1e-12)
    # deficit here is the applied correction above the certified solve
    assert np.all(p_rad.deficit_values >= -1e-15)
    assert np.allclose(p_rad.values - p_rad.deficit_values, p_lo.values,
                       atol=1e-12)
    rad = p_rad.meta["radiation"]
    assert rad["alpha"] > 0.0
    # sup-norm residual includes angular variation the radial law cannot
    # absorb; at this small window it stays below alpha but not by much
    assert rad["fit_residual"] < rad["alpha"]


def test_margin_guard():
    wide = TargetSet([[5, 0, 0, 0, 0], [-5, 0, 0, 0, 0]])
    with pytest.raises(MarginTooSmall):
        solve_visit_fixpoint(wide, BINARY, SRW5, W8)
    with pytest.raises(MarginTooSmall):
        solve_visit_radiation(TargetSet([[3, 0, 0, 0, 0]]), BINARY, SRW5,
                              WindowSpec((0,) * 5, 8.0))


def test_triple_target_fixpoint():
    A = TargetSet([[0] * 5, [2, 0, 0, 0, 0], [0, 1, 0, 0, 0]])
    p, r = solve_visit_fixpoint(A, BINARY, SRW5, W8)
    for pt in A.points:
        assert p.at(pt) == 1.0
    off = ~A.contains_batch(p.lattice.coords)
    assert np.max(np.abs(p.values[off]
                         - 2 * r.values[off] * (1 - r.values[off]))) < 1e-9


# --- killed Green functions -------------------------------------------------

def test_green_killed_detailed_balance(origin_fields):
    # survival weights sit on every vertex but the endpoint, so reversing a
    # path trades a (1-k) factor at x for one at y
    _, r = origin_fields
    a, b = 2 * E1, np.array([0, 1, 1, 0, 0])
    gab = green_killed(r, a, b)
    gba = green_killed(r, b, a)
    assert gab * (1.0 - r.at(b)) == pytest.approx(gba * (1.0 - r.at(a)),
                                                  rel=1e-9)
    assert 0.0 < gab < 1.0


def test_green_killed_deficit(origin_fields):
    _, r = origin_fields
    v, dfc = green_killed_with_deficit(r, 2 * E1, 3 * E1)
    assert v > 0.0 and dfc >= 0.0


def test_green_column_field(origin_fields):
    _, r = origin_fields
    col = green_column_field(r, [0] * 5)
    assert col.tag == "green_column"
    assert col.at([0] * 5) >= 1.0        # diagonal includes the empty path
    assert col.at(2 * E1) == pytest.approx(green_killed(r, 2 * E1, [0] * 5),
                                           rel=1e-9)


def test_harmonic_measure_unrestricted(origin_fields):
    _, r = origin_fields
    x, y = 2 * E1, np.array([0, 2, 0, 0, 0])
    hm = harmonic_measure(None, r, x, y)
    assert hm == pytest.approx(green_killed(r, x, y), rel=1e-9)


def test_harmonic_measure_restriction_shrinks(origin_fields):
    _, r = origin_fields
    x, y = 2 * E1, 3 * E1
    ball = [p for p in r.lattice.coords
            if (p ** 2).sum() <= 16]
    hm_ball = harmonic_measure(np.array(ball), r, x, y)
    hm_free = harmonic_measure(None, r, x, y)
    # fewer admissible interior vertices can only remove path mass
    assert hm_ball <= hm_free + 1e-12
    assert hm_ball > 0.0


def test_first_visit_decompositions():
    B = np.array([p for p in
                  np.stack(np.meshgrid(*[np.arange(-2, 3)] * 2),
                           axis=-1).reshape(-1, 2)])
    Bpts = np.zeros((B.shape[0], 5), dtype=np.int64)
    Bpts[:, :2] = B
    res = check_first_visit(ORIGIN, Bpts, [0] * 5, 3 * E1, W8, BINARY, SRW5)
    assert res.shape == (4,)
    assert np.all(res < 1e-8)


def test_occupation_pathsum_agrees():
    Bpts = np.zeros((5, 5), dtype=np.int64)
    Bpts[:, 0] = np.arange(-2, 3)
    lhs, rhs = occupation_pathsum(ORIGIN, Bpts, 2 * E1, BINARY, SRW5, W8)
    assert lhs == pytest.approx(rhs, rel=1e-9)
    assert lhs > 0.0


def test_convolved_sum_check_fields():
    Bpts = np.zeros((3, 5), dtype=np.int64)
    Bpts[:, 1] = np.arange(-1, 2)
    chk = convolved_sum_check(ORIGIN, Bpts, 2 * E1, BINARY, SRW5, W8)
    assert chk.lhs_q > 0.0 and chk.lhs_p > 0.0
    assert chk.rhs_q >= 0.0 and chk.rhs_p >= 0.0


def test_q_dominates_p(origin_fields):
    p, _ = origin_fields
    for x in (2 * E1, 3 * E1, np.array([1, 1, 0, 0, 0])):
        q, dfc = q_via_green_with_deficit(ORIGIN, x, BINARY, SRW5, W8)
        assert q + dfc >= p.at(x) - 1e-12
        assert 0.0 <= q <= 1.0 and dfc >= 0.0


def test_restriction_ratio_bounds():
    rp, rq = restriction_ratio(ORIGIN, 2 * E1, BINARY, SRW5, n=2, window=W8)
    assert 0.0 < rp <= 1.0
    assert 0.0 < rq <= 1.0


# --- path weights -----------------------------------------------------------

def test_path_weight_plain():
    gamma = [[0, 0, 0, 0, 0], [1, 0, 0, 0, 0], [1, 1, 0, 0, 0]]
    assert path_weight(gamma, SRW5) == pytest.approx(0.01)
    assert path_weight(gamma, SRW5, k_field=0.5) == pytest.approx(
        0.01 * 0.25)


def test_path_weight_field_killing(origin_fields):
    _, r = origin_fields
    gamma = [[2, 0, 0, 0, 0], [1, 0, 0, 0, 0]]
    w = path_weight(gamma, SRW5, k_field=r)
    assert w == pytest.approx(0.1 * (1.0 - r.at(2 * E1)))


def test_path_weight_bad_step():
    with pytest.raises(StepOutsideSupport):
        path_weight([[0] * 5, [2, 0, 0, 0, 0]], SRW5)


# --- exports ----------------------------------------------------------------

def test_field_round_trip(tmp_path, origin_fields):
    p, _ = origin_fields
    path = tmp_path / "p.bin"
    write_field(p, path)
    back = read_field(path, SRW5)
    assert back.tag == p.tag
    assert back.window.radius == p.window.radius
    assert np.allclose(back.values, p.values)


def test_field_summary_structure(origin_fields):
    p, _ = origin_fields
    s = field_summary(p, [2 * E1, 3 * E1])
    assert s["tag"] == "visit_p" and len(s["probes"]) == 2
    assert s["probes"][0]["value"] == pytest.approx(p.at(2 * E1))


def test_probe_outside_window_raises(origin_fields):
    p, _ = origin_fields
    with pytest.raises(WindowTooSmall):
        p.at([9, 0, 0, 0, 0])
