"""Capacity estimators: probe geometry, extrapolation output, scaling study.

The oracle path is deterministic, so the point capacity at the default
probe radii is frozen as a band and the contraction of successive
per-radius gaps is asserted directly.  Monte Carlo runs only get
consistency checks against the oracle interval; the small budgets here
say nothing sharp about the limit value.
"""

import csv

import numpy as np
import pytest

from branchcap.capacity import (CapacityEstimate, ball_scaling_study,
                                ball_volume_constant, bcap_point,
                                capacity_ratio, default_radii, estimate_bcap,
                                probe_points, subspace_ball,
                                write_capacity_csv)
from branchcap.errors import BudgetExceeded, ConfigError, RadiusTooSmall
from branchcap.lattice import theta_preset
from branchcap.snakes import TargetSet
from branchcap.trees import offspring_preset

SRW5 = theta_preset("srw5")
BINARY = offspring_preset("binary")
GEOMETRIC = offspring_preset("geometric")
ORIGIN = TargetSet(np.zeros((1, 5), dtype=np.int64), name="origin")


@pytest.fixture(scope="module")
def oracle_point():
    return bcap_point(SRW5, BINARY, method="oracle")


# --- estimate container ----------------------------------------------------

def test_estimate_validation():
    row = ((4.0, 0.5, 0.05),)
    est = CapacityEstimate(0.5, 0.4, 0.7, row, "mc", {})
    assert est.ci_width == pytest.approx(0.3)
    assert set(est.to_json()) >= {"value", "ci_low", "ci_high", "method"}
    with pytest.raises(ConfigError):
        CapacityEstimate(0.5, 0.4, 0.7, row, "magic", {})
    with pytest.raises(ConfigError):
        CapacityEstimate(0.5, 0.4, 0.7, (), "mc", {})
    with pytest.raises(ConfigError):
        CapacityEstimate(0.9, 0.4, 0.7, row, "mc", {})
    with pytest.raises(ConfigError):
        CapacityEstimate(-0.1, -0.2, 0.7, row, "mc", {})


def test_default_radii():
    assert default_radii(ORIGIN) == (4, 6, 8)
    ball = subspace_ball(5, 1, 5)
    assert ball.hull_radius == pytest.approx(5.0)
    assert default_radii(ball) == (10, 15, 20)
    assert len(default_radii(ORIGIN, count=4)) == 4


# --- target geometry -------------------------------------------------------

def test_subspace_ball_counts():
    # lattice-ball counts by squared norm: 7 = 1 + 2*3, 13 = 1 + 4 + 8,
    # 221 = 1 + 10 + 40 + 80 + 90 in d = 5
    assert subspace_ball(5, 1, 3).points.shape == (7, 5)
    assert subspace_ball(5, 2, 2).points.shape == (13, 5)
    assert subspace_ball(5, 5, 2).points.shape == (221, 5)
    padded = subspace_ball(5, 2, 2).points
    assert not padded[:, 2:].any()
    with pytest.raises(ConfigError):
        subspace_ball(5, 0, 2)
    with pytest.raises(ConfigError):
        subspace_ball(5, 6, 2)


def test_probe_points_axis_first():
    pts = probe_points(ORIGIN, 4.0, 10, SRW5, seed=0)
    expect = np.zeros((5, 5), dtype=np.int64)
    expect[0, 0], expect[1, 0] = 4, -4
    expect[2, 1], expect[3, 1] = 4, -4
    expect[4, 2] = 4
    assert np.array_equal(pts[:5], expect)
    assert len({tuple(p) for p in pts.tolist()}) == len(pts)
    again = probe_points(ORIGIN, 4.0, 10, SRW5, seed=0)
    assert np.array_equal(pts, again)


def test_probe_points_swallowed():
    fat = subspace_ball(5, 5, 2)
    with pytest.raises(RadiusTooSmall):
        probe_points(fat, 1.0, 10, SRW5, seed=0)


# --- estimator guards ------------------------------------------------------

def test_estimate_bcap_validation():
    with pytest.raises(ConfigError):
        estimate_bcap(ORIGIN, SRW5, BINARY, method="magic")
    with pytest.raises(ConfigError):
        estimate_bcap(ORIGIN, SRW5, BINARY, radii=(6, 4, 8))
    with pytest.raises(ConfigError):
        estimate_bcap(ORIGIN, SRW5, BINARY, probes_per_radius=0)
    ball = subspace_ball(5, 2, 2)
    with pytest.raises(RadiusTooSmall):
        estimate_bcap(ball, SRW5, BINARY, radii=(3, 4, 5))


def test_oracle_sites_guard():
    # window radius 120 would need ~1e11 sites; must refuse before allocating
    assert ball_volume_constant(SRW5) * 120 ** 5 > 2e10
    with pytest.raises(BudgetExceeded):
        estimate_bcap(ORIGIN, SRW5, BINARY, radii=(40, 60, 80),
                      method="oracle")


# --- oracle point capacity -------------------------------------------------

def test_oracle_point_value(oracle_point):
    est = oracle_point
    assert est.method == "oracle"
    assert est.ci_low <= est.value <= est.ci_high
    assert est.value == pytest.approx(0.3907, abs=0.02)
    vals = [v for _, v, _ in est.per_radius]
    assert vals == sorted(vals, reverse=True)


def test_oracle_spread_contracts(oracle_point):
    # the per-radius sequence flattens as the probes leave the near field
    vals = [v for _, v, _ in oracle_point.per_radius]
    gaps = np.abs(np.diff(vals))
    assert gaps[-1] < gaps[0]


# --- Monte Carlo path ------------------------------------------------------

def test_mc_brackets_oracle(oracle_point):
    est = estimate_bcap(ORIGIN, SRW5, BINARY, method="mc",
                        n_samples=40_000, seed=7)
    assert est.value >= 0.0
    assert est.ci_low <= oracle_point.ci_high and \
        oracle_point.ci_low <= est.ci_high
    assert est.meta["n_samples"] == 40_000


def test_mc_deterministic():
    a = estimate_bcap(ORIGIN, SRW5, BINARY, method="mc",
                      n_samples=8_000, seed=11)
    b = estimate_bcap(ORIGIN, SRW5, BINARY, method="mc",
                      n_samples=8_000, seed=11)
    c = estimate_bcap(ORIGIN, SRW5, BINARY, method="mc",
                      n_samples=8_000, seed=12)
    assert a.value == b.value
    assert a.per_radius == b.per_radius
    assert a.value != c.value


def test_capacity_csv(tmp_path):
    est = estimate_bcap(ORIGIN, SRW5, BINARY, method="mc",
                        n_samples=8_000, seed=11)
    path = tmp_path / "cap.csv"
    write_capacity_csv(est, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "radius"
    assert len(rows) - 1 == len(est.meta["probes"])
    rescaled = [float(r[5]) for r in rows[1:]]
    assert all(np.isfinite(rescaled))


# --- scaling study ---------------------------------------------------------

def test_study_validation():
    with pytest.raises(ConfigError):
        ball_scaling_study(0, (1, 2, 3), SRW5, BINARY, budget=10 ** 6)
    with pytest.raises(ConfigError):
        ball_scaling_study(6, (1, 2, 3), SRW5, BINARY, budget=10 ** 6)
    with pytest.raises(ConfigError):
        ball_scaling_study(1, (1, 2), SRW5, BINARY, budget=10 ** 6)
    with pytest.raises(ConfigError):
        ball_scaling_study(1, (1, 3, 2), SRW5, BINARY, budget=10 ** 6)
    with pytest.raises(BudgetExceeded):
        ball_scaling_study(1, (1, 2, 3), SRW5, BINARY, budget=89_999)


def test_study_oracle_smoke():
    # three sub-2 radii keep every window tiny; this checks report plumbing
    # and the log-corrected branch at the critical flatness m = d - 4, not
    # the exponent itself (the acceptance run does that at real radii)
    rep = ball_scaling_study(1, (1.2, 1.5, 1.8), SRW5, BINARY,
                             budget=0, method="oracle", seed=5)
    assert rep.m == 1 and len(rep.estimates) == 3
    assert all(e.value > 0 and e.method == "oracle" for e in rep.estimates)
    assert np.isfinite(rep.slope) and rep.slope_stderr >= 0
    assert rep.fixed_residual >= 0
    assert rep.corrected_residual is not None
    assert rep.corrected_improvement is not None
    js = rep.to_json()
    assert len(js["estimates"]) == 3 and js["m"] == 1


def test_study_corrected_only_at_flat():
    rep = ball_scaling_study(2, (1.2, 1.5, 1.8), SRW5, BINARY,
                             budget=0, method="oracle", seed=5)
    assert rep.corrected_residual is None
    assert rep.corrected_improvement is None


# --- offspring-law ratio ---------------------------------------------------

def test_capacity_ratio_orders_by_variance():
    # higher offspring variance thins the capacity, so binary over geometric
    # lands above one; the far limit is sigma^2-ratio 2 but these radii sit
    # well inside the near field
    out = capacity_ratio(ORIGIN, SRW5, BINARY, GEOMETRIC,
                         method="oracle", radii=(2.5, 3.5, 4.5))
    assert 1.02 < out["ratio"] < 2.2
    lo, hi = out["ratio_ci"]
    assert lo <= out["ratio"] <= hi
    assert out["numerator"]["value"] > out["denominator"]["value"]
