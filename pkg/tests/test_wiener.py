"""Dyadic shells of unbounded sets, series terms, and the verdict rule.

classify_terms is pure, so the verdict logic is pinned with synthetic
term lists.  Monte Carlo entry points get fixed spine horizons here;
the adaptive doubling path is exercised where the budget is serious,
in the acceptance run.
"""

import csv
import json

import numpy as np
import pytest

from branchcap.errors import ConfigError, ShellTooLarge
from branchcap.lattice import theta_preset
from branchcap.snakes import TargetSet
from branchcap.trees import offspring_preset
from branchcap.wiener import (InfiniteSetSpec, SeriesReport, ShellTerm,
                              VERDICTS, classify_terms, correlation_check,
                              estimate_shell_visit, low_dim_io_check,
                              preset_spec, shell_refinement, shells,
                              visits_io_trace, wiener_series, write_terms_csv)

SRW5 = theta_preset("srw5")
BINARY = offspring_preset("binary")


def term(n, value, rel=0.02, count=1):
    return ShellTerm(n, count, value * 2.0 ** n, 0.0, 0.0, value,
                     value * (1 - rel), value * (1 + rel))


# --- set specs -------------------------------------------------------------

def test_spec_validation():
    with pytest.raises(ConfigError):
        InfiniteSetSpec("blob", 5, {})
    with pytest.raises(ConfigError):
        InfiniteSetSpec("subspace", 0, {"m": 1})
    with pytest.raises(ConfigError):
        InfiniteSetSpec("subspace", 5, {"m": 6})
    with pytest.raises(ConfigError):
        InfiniteSetSpec("subspace", 5, {"m": 1.5})
    with pytest.raises(ConfigError):
        InfiniteSetSpec("axis_points", 5, {"stride": "thirds"})
    with pytest.raises(ConfigError):
        InfiniteSetSpec("axis_points", 5, {"signs": "negative"})
    with pytest.raises(ConfigError):
        InfiniteSetSpec("explicit_shells", 5, {"shells": {}})
    with pytest.raises(ConfigError):
        InfiniteSetSpec("explicit_shells", 5, {"shells": {"2": [[5, 0, 0]]}})
    with pytest.raises(ConfigError):
        InfiniteSetSpec("predicate", 5, {"name": "nope"})


def test_explicit_shell_band_checked():
    # |(1,0,...)| = 1 sits under the level-2 band [4, 8)
    with pytest.raises(ConfigError):
        InfiniteSetSpec("explicit_shells", 5,
                        {"shells": {"2": [[1, 0, 0, 0, 0]]}})


def test_axis_shell_points():
    spec = preset_spec("axis")
    pts = spec.shell_points(3)
    assert pts.shape == (16, 5)
    firsts = np.sort(np.abs(pts[:, 0]))
    assert firsts.min() == 8 and firsts.max() == 15
    assert not pts[:, 1:].any()
    assert spec.shell_count(3) == 16


def test_powers_shell_points():
    spec = preset_spec("powers_of_2")
    for n in (1, 3, 6):
        pts = spec.shell_points(n)
        assert pts.shape == (1, 5)
        assert pts[0, 0] == 2 ** n
    assert spec.shell_count(10) == 1


def test_hyperplane_count_brute():
    # exact annulus count in Z^4 against direct enumeration
    spec = preset_spec("hyperplane")
    r = 7
    axes = [np.arange(-r, r + 1)] * 4
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 4)
    s2 = (grid ** 2).sum(axis=1)
    brute = int(((s2 >= 16) & (s2 <= 63)).sum())
    assert spec.shell_count(2) == brute
    pts = spec.shell_points(2)
    assert pts.shape == (brute, 5)
    assert not pts[:, 4].any()


def test_predicate_shells():
    diag = InfiniteSetSpec("predicate", 5, {"name": "diagonal"})
    pts = diag.shell_points(4)
    assert pts.size and np.array_equal(pts[:, 0], pts[:, 1])
    s2 = (pts ** 2).sum(axis=1)
    assert s2.min() >= 4 ** 4 and s2.max() < 4 ** 5
    sq = InfiniteSetSpec("predicate", 5, {"name": "axis_squares"})
    pts = sq.shell_points(4)
    roots = np.sqrt(pts[:, 0])
    assert np.array_equal(roots, np.round(roots))


def test_spec_json_round_trip():
    spec = preset_spec("powers_of_2")
    back = InfiniteSetSpec.from_json(spec.to_json())
    assert back == spec
    flat = InfiniteSetSpec.from_json({"kind": "subspace", "m": 2}, dim=5)
    assert flat.params["m"] == 2 and flat.dim == 5


# --- shell targets and decompositions --------------------------------------

def test_shell_target_modes():
    spec = preset_spec("hyperplane")
    assert spec.shell_count(8) > 20_000
    tgt = spec.shell_target(8)
    assert tgt.mode == "annulus"
    assert tgt.contains_point(np.array([300, 0, 0, 0, 0]))
    assert not tgt.contains_point(np.array([300, 0, 0, 0, 1]))
    assert not tgt.contains_point(np.array([100, 0, 0, 0, 0]))
    small = spec.shell_target(1)
    assert small.mode == "points"


def test_enumerable_over_cap_raises():
    spec = preset_spec("axis")
    with pytest.raises(ShellTooLarge):
        spec.shell_target(6, cap=50)


def test_decomposition():
    spec = preset_spec("finite")
    dec = shells(spec, 1, 3)
    assert list(dec.levels) == [1, 2, 3]
    assert [dec.count(n) for n in dec.levels] == [0, 2, 0]
    assert dec.nonempty_levels() == [2]
    assert dec.target(1) is None
    assert dec.target(2).points.shape == (2, 5)
    with pytest.raises(ConfigError):
        shells(spec, 3, 1)
    with pytest.raises(ConfigError):
        shells(spec, 0, 30)
    hyper = shells(preset_spec("hyperplane"), 3, 3, cap=1000)
    with pytest.raises(ShellTooLarge):
        hyper.points(3)
    assert hyper.target(3).mode == "annulus"


def test_shell_refinement_partitions():
    spec = preset_spec("axis")
    pts = spec.shell_points(8)
    pieces = shell_refinement(pts, 8)
    assert sum(len(p) for p in pieces) == len(pts)
    seen = {tuple(row) for p in pieces for row in p.tolist()}
    assert seen == {tuple(row) for row in pts.tolist()}
    limit = 2 ** 8 / 32.0
    for p in pieces:
        if len(p) > 1:
            diff = p[:, None, :] - p[None, :, :]
            diam = np.sqrt((diff ** 2).sum(axis=-1)).max()
            assert diam <= limit + 1e-9
    with pytest.raises(ConfigError):
        shell_refinement(np.zeros((0, 5), dtype=np.int64), 3)


# --- verdict rule ----------------------------------------------------------

def test_classify_decay_is_transient():
    terms = [term(n, 2.0 ** -n) for n in range(2, 6)]
    verdict, fit = classify_terms(terms)
    assert verdict == "indicative-transient"
    assert fit["rho"] == pytest.approx(0.5, abs=0.05)


def test_classify_flat_tight_is_recurrent():
    terms = [term(n, 1.0 + 0.01 * n) for n in range(2, 6)]
    verdict, fit = classify_terms(terms)
    assert verdict == "indicative-recurrent"
    assert fit["rho_stderr"] <= 0.25
    assert fit["term_spread"] >= 0.25


def test_classify_noisy_flat_is_indeterminate():
    # same central values, but CIs so wide the ratio is unresolved
    terms = [term(n, 1.0, rel=0.9) for n in range(2, 6)]
    verdict, fit = classify_terms(terms)
    assert verdict == "indeterminate"
    assert fit["rule"] == "decay-fit"
    assert fit["rho_stderr"] > 0.25


def test_classify_growth_without_flatness():
    # doubling terms breach the factor-4 spread gate
    terms = [term(n, 2.0 ** n) for n in range(2, 6)]
    verdict, fit = classify_terms(terms)
    assert verdict == "indeterminate"
    assert fit["term_spread"] < 0.25


def test_classify_small_cases():
    verdict, fit = classify_terms([term(2, 1.0), term(3, 1.0)])
    assert (verdict, fit["rule"]) == ("indeterminate", "too-few-terms")
    tail = [term(2, 1.0), ShellTerm(3, 0, 0, 0, 0, 0, 0, 0),
            ShellTerm(4, 0, 0, 0, 0, 0, 0, 0)]
    verdict, fit = classify_terms(tail)
    assert (verdict, fit["rule"]) == ("indicative-transient", "empty-tail")
    assert fit["trailing_empty"] == 2


def test_report_validation():
    with pytest.raises(ConfigError):
        SeriesReport({}, (), (0.1, 0.3), "maybe", {})
    with pytest.raises(ConfigError):
        SeriesReport({}, (), (0.3, 0.1), VERDICTS[0], {})


# --- Monte Carlo entry points ----------------------------------------------

def test_shell_visit_rejects_origin():
    home = TargetSet(np.zeros((1, 5), dtype=np.int64))
    with pytest.raises(ConfigError):
        estimate_shell_visit(home, SRW5, BINARY, 100)


def test_shell_visit_deterministic():
    tgt = preset_spec("powers_of_2").shell_target(1)
    a = estimate_shell_visit(tgt, SRW5, BINARY, 1500, spine_len=256, seed=3)
    b = estimate_shell_visit(tgt, SRW5, BINARY, 1500, spine_len=256, seed=3)
    c = estimate_shell_visit(tgt, SRW5, BINARY, 1500, spine_len=256, seed=4)
    assert a.value == b.value and a.value != c.value
    assert 0.0 < a.value < 0.5


def test_correlation_check():
    spec = preset_spec("powers_of_2")
    with pytest.raises(ConfigError):
        correlation_check(spec, 3, 2, SRW5, BINARY, 100)
    with pytest.raises(ConfigError):
        correlation_check(preset_spec("finite"), 1, 2, SRW5, BINARY, 100)
    out = correlation_check(spec, 1, 2, SRW5, BINARY, 1500, seed=5)
    assert out["p_joint"] <= min(out["p_n"], out["p_m"]) + 1e-12
    if not out["degenerate"]:
        lo, hi = out["ratio_ci"]
        assert lo <= out["ratio"] <= hi
        assert out["ratio"] >= 0.0


def test_visits_trace_monotone():
    spec = preset_spec("axis")
    out = visits_io_trace(spec, (1, 2), SRW5, BINARY, 1000, seed=7)
    rows = out["rows"]
    assert [r["horizon"] for r in rows] == [1, 2]
    # counting more shells can only add visits, sample by sample
    assert rows[1]["mean"] >= rows[0]["mean"]
    assert out["levels"] == [0, 1, 2]
    assert all(0.0 <= p <= 1.0 for p in out["marginals"])
    with pytest.raises(ConfigError):
        visits_io_trace(spec, (2, 2), SRW5, BINARY, 100)


def test_series_smoke_and_csv(tmp_path):
    rep = wiener_series(preset_spec("finite"), 1, 3, SRW5, BINARY,
                        n_samples=20_000, seed=9)
    assert rep.verdict == "indeterminate"
    assert rep.fit["rule"] == "too-few-terms"
    assert [t.count for t in rep.terms] == [0, 2, 0]
    assert list(rep.meta["capacities"]) == [2]
    sums = np.asarray(rep.partial_sums)
    assert np.all(np.diff(sums) >= 0.0)
    json.dumps(rep.to_json())
    path = tmp_path / "terms.csv"
    write_terms_csv(rep, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "n" and len(rows) == 4


def test_series_needs_d5():
    with pytest.raises(ConfigError):
        wiener_series(preset_spec("hyperplane", dim=4), 1, 3,
                      theta_preset("srw4"), BINARY, n_samples=1000)
    with pytest.raises(ConfigError):
        wiener_series(preset_spec("hyperplane", dim=6), 1, 3, SRW5, BINARY,
                      n_samples=1000)


# --- low-dimension control -------------------------------------------------

def test_low_dim_guards():
    with pytest.raises(ConfigError):
        low_dim_io_check(5, (4, 8), 100, BINARY)
    with pytest.raises(ConfigError):
        low_dim_io_check(3, (4, 8), 100, BINARY, theta=theta_preset("srw2"))
    with pytest.raises(ConfigError):
        low_dim_io_check(2, (8, 4), 100, BINARY)


def test_low_dim_growth():
    out = low_dim_io_check(2, (4, 8), 300, BINARY, seed=11)
    assert len(out["means"]) == 2
    # cumulative counts are nondecreasing in the horizon, path by path
    assert out["means"][1] >= out["means"][0] > 0
    assert out["ratios"][0] >= 1.0
