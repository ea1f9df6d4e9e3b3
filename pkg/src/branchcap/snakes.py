"""Tree-indexed walks and Monte Carlo visit-probability estimators.

A snake is a plane tree together with lattice labels obtained by summing
one step variable per edge from the root.  The estimators here sample
snakes without materializing trees: the numba kernels in _kernels fuse
tree growth, labeling and membership testing with early exit.

Truncation policy.  Caps are flags, never silent: every estimator reports
a one-sided ``truncation_bias_bound`` on the visit probability mass it may
have missed.  For capped trees the kernel records, at the moment the cap
fires, the pending frontier weight sum(children * gap^(2-d)); the wrapper
scales it by the probe's own estimated visit constant (value * gap_x^(d-2),
a self-calibration of p(z) ~ C * gap(z)^(2-d)) times a safety factor.  For
infinite snakes a spine tail term is added for the discarded backbone
beyond spine_len; it uses the same self-calibration with the q-scaling
q(z) ~ C * gap(z)^(4-d) and the transient-backbone sum over times > L.
Bounds are recorded, never folded into the value.

Reproducibility.  Draw streams are keyed by (seed, task label, absolute
sample index); the task label covers the estimator kind, the target digest
and the probe, but not n_samples or caps, so enlarging a run replays its
prefix and tightening a cap stays coupled until the first truncation.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as _k
from .errors import OverlappingSets
from .rng import philox_key
from .trees import (OffspringDistribution, PlaneTree, adjoint_distribution,
                    size_biased_total)

__all__ = [
    "TargetSet",
    "SnakeRealization",
    "Estimate",
    "label_tree",
    "snake_visits",
    "count_visits",
    "estimate_p",
    "estimate_r",
    "estimate_q",
    "estimate_q_incipient",
    "estimate_joint",
    "estimate_multi",
    "visit_count_profile",
]

DEFAULT_NODE_CAP = 200_000
DEFAULT_BUSH_CAP = 2_000
SPINE_START = 64
SPINE_CAP = 4_096
REL_FLOOR = 0.15
PILOT_SAMPLES = 4_000

# tree-mode selectors for estimate_multi, re-exported from the kernels
TREE_FINITE = _k.TREE_FINITE
TREE_ADJOINT = _k.TREE_ADJOINT
TREE_INFINITE = _k.TREE_INFINITE
TREE_KESTEN = _k.TREE_KESTEN
SAFETY_FRONTIER = 3.0
SAFETY_TAIL = 2.0


class TargetSet:
    """Finite target with O(log n) membership for the kernels.

    Two storage modes.  "points" keeps the explicit point list as sorted
    packed keys relative to a per-target base, guarded by a bounding-ball
    precheck; it requires dim <= 6 and a bounding radius under the packed
    coordinate range.  "annulus" describes the huge hyperplane shells
    implicitly: first m coordinates with squared norm in [lo2, hi2], the
    rest zero.  Both modes present the same membership interface.
    """

    def __init__(self, points, name: str = ""):
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("target needs at least one lattice point")
        pts = np.unique(pts, axis=0)
        self.mode = "points"
        self.dim = int(pts.shape[1])
        self.points: Optional[np.ndarray] = pts
        self.name = name
        if self.dim > 6:
            raise ValueError("packed membership supports dim <= 6")
        bits = 60 // self.dim
        center = np.round(pts.mean(axis=0)).astype(np.int64)
        rad2 = int(((pts - center) ** 2).sum(axis=1).max())
        half = 1 << (bits - 1)
        if math.isqrt(rad2) + 1 > half - 1:
            raise ValueError("target too spread for packed membership")
        self.center = center
        self.rad2 = rad2
        self.base = center - half
        self.keys = np.sort(self._pack(pts))
        self.m = 0
        self.lo2 = 0
        self.hi2 = 0

    @classmethod
    def subspace_annulus(cls, dim: int, m: int, lo2: int, hi2: int,
                         name: str = "") -> "TargetSet":
        """Implicit target: coordinates m.. are zero, |x[:m]|^2 in [lo2, hi2]."""
        if not 1 <= m <= dim:
            raise ValueError("need 1 <= m <= dim")
        if not 0 <= lo2 <= hi2:
            raise ValueError("need 0 <= lo2 <= hi2")
        obj = cls.__new__(cls)
        obj.mode = "annulus"
        obj.dim = int(dim)
        obj.points = None
        obj.name = name
        obj.center = np.zeros(dim, dtype=np.int64)
        obj.rad2 = int(hi2)
        obj.base = np.zeros(dim, dtype=np.int64)
        obj.keys = np.zeros(0, dtype=np.uint64)
        obj.m = int(m)
        obj.lo2 = int(lo2)
        obj.hi2 = int(hi2)
        return obj

    def _pack(self, pts: np.ndarray) -> np.ndarray:
        bits = np.uint64(60 // self.dim)
        rel = (pts - self.base).astype(np.uint64)
        keys = np.zeros(pts.shape[0], dtype=np.uint64)
        for a in range(self.dim):
            keys = (keys << bits) | rel[:, a]
        return keys

    @property
    def size(self) -> int:
        if self.mode == "points":
            return int(self.points.shape[0])
        raise ValueError("annulus targets have no materialized size")

    @property
    def hull_radius(self) -> float:
        """Euclidean radius of the bounding ball around the target center."""
        return math.sqrt(self.rad2)

    def contains_batch(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.int64)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if self.mode == "points":
            inside = ((pts - self.center) ** 2).sum(axis=1) <= self.rad2
            out = np.zeros(pts.shape[0], dtype=bool)
            if inside.any():
                keys = self._pack(pts[inside])
                pos = np.searchsorted(self.keys, keys)
                pos = np.minimum(pos, self.keys.size - 1)
                out[inside] = self.keys[pos] == keys
            return out
        perp_ok = (pts[:, self.m:] == 0).all(axis=1)
        s2 = (pts[:, :self.m].astype(np.int64) ** 2).sum(axis=1)
        return perp_ok & (s2 >= self.lo2) & (s2 <= self.hi2)

    def contains_point(self, x) -> bool:
        return bool(self.contains_batch(np.asarray(x).reshape(1, -1))[0])

    def gap_from(self, x) -> float:
        """Euclidean distance from x to the target hull, floored at 1."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if self.mode == "points":
            g = math.sqrt(((x - self.center) ** 2).sum()) - self.hull_radius
        else:
            perp2 = float((x[self.m:] ** 2).sum())
            r = math.sqrt(float((x[:self.m] ** 2).sum()))
            lo_r, hi_r = math.sqrt(self.lo2), math.sqrt(self.hi2)
            dr = max(lo_r - r, r - hi_r, 0.0)
            g = math.sqrt(perp2 + dr * dr)
        return max(g, 1.0)

    def exact_gap_from(self, x) -> float:
        """Exact point-to-set Euclidean distance (points mode only)."""
        if self.mode != "points":
            return self.gap_from(x)
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        return float(np.sqrt(((self.points - x) ** 2).sum(axis=1).min()))

    @property
    def digest(self) -> str:
        h = hashlib.sha1()
        h.update(self.mode.encode())
        h.update(np.int64([self.dim, self.m, self.lo2, self.hi2]).tobytes())
        if self.points is not None:
            h.update(np.ascontiguousarray(self.points).tobytes())
        return h.hexdigest()[:16]

    def overlaps(self, other: "TargetSet") -> bool:
        if self.mode == "points" and other.mode == "points":
            mine = set(map(tuple, self.points))
            return any(tuple(p) in mine for p in other.points)
        if self.mode == "annulus" and other.mode == "annulus":
            return self.m == other.m and not (
                self.hi2 < other.lo2 or other.hi2 < self.lo2)
        pts = self if self.mode == "points" else other
        ann = other if self.mode == "points" else self
        return bool(ann.contains_batch(pts.points).any())

    def __repr__(self):
        if self.mode == "points":
            return "TargetSet(points=%d, dim=%d)" % (self.size, self.dim)
        return "TargetSet(annulus m=%d, lo2=%d, hi2=%d, dim=%d)" % (
            self.m, self.lo2, self.hi2, self.dim)


def _descriptors(targets: Sequence[TargetSet], dim: int):
    nsh = len(targets)
    if nsh == 0 or nsh > 64:
        raise ValueError("need 1..64 targets")
    modes = np.empty(nsh, dtype=np.int64)
    koff = np.zeros(nsh + 1, dtype=np.int64)
    bases = np.zeros((nsh, dim), dtype=np.int64)
    centers = np.zeros((nsh, dim), dtype=np.int64)
    rad2s = np.zeros(nsh, dtype=np.int64)
    ms = np.zeros(nsh, dtype=np.int64)
    lo2s = np.zeros(nsh, dtype=np.int64)
    hi2s = np.zeros(nsh, dtype=np.int64)
    key_parts = []
    for i, t in enumerate(targets):
        if t.dim != dim:
            raise ValueError("target dimension mismatch")
        modes[i] = 0 if t.mode == "points" else 1
        bases[i] = t.base
        centers[i] = t.center
        rad2s[i] = t.rad2
        ms[i] = t.m
        lo2s[i] = t.lo2
        hi2s[i] = t.hi2
        key_parts.append(t.keys)
        koff[i + 1] = koff[i] + t.keys.size
    keys = np.concatenate(key_parts) if key_parts else np.zeros(0, np.uint64)
    return modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s


@dataclass
class SnakeRealization:
    """A labeled tree: labels[v] is the lattice position of vertex v."""

    tree: PlaneTree
    labels: np.ndarray
    start: np.ndarray


@dataclass
class Estimate:
    """Monte Carlo estimate with a one-sided truncation bias bound."""

    value: float
    stderr: float
    n_samples: int
    truncation_bias_bound: float
    seed: int
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n": self.n_samples,
            "bias_bound": self.truncation_bias_bound,
            "seed": self.seed,
            "params": self.params,
        }


def label_tree(tree: PlaneTree, theta, x0, rng) -> SnakeRealization:
    """Attach one step variable per edge; labels are root-to-vertex sums."""
    x0 = np.asarray(x0, dtype=np.int64)
    n = tree.n
    labels = np.empty((n, theta.dim), dtype=np.int64)
    labels[0] = x0
    if n > 1:
        cdf = np.cumsum(theta.probs)
        idx = np.searchsorted(cdf, rng.random(n - 1), side="right")
        steps = theta.atoms[idx]
        for v in range(1, n):
            labels[v] = labels[tree.parent[v]] + steps[v - 1]
    return SnakeRealization(tree=tree, labels=labels, start=x0)


def snake_visits(real: SnakeRealization, target: TargetSet) -> bool:
    """True iff some vertex label, the root included, lies in the target."""
    return bool(target.contains_batch(real.labels).any())


def count_visits(real: SnakeRealization, target: TargetSet) -> int:
    """Number of vertices whose labels lie in the target."""
    return int(target.contains_batch(real.labels).sum())


def _task_label(kind: str, targets: Sequence[TargetSet], x, theta, mu) -> str:
    xs = ",".join(str(int(v)) for v in np.asarray(x).reshape(-1))
    tg = "+".join(t.digest for t in targets)
    return "%s|%s|%s|%s|%s" % (kind, tg, xs, theta.name or "theta", mu.name or "mu")


def _run_visit_kernel(targets, x, theta, mu, tree_mode, n_samples, node_cap,
                      spine_len, bush_cap, seed, kind):
    x = np.ascontiguousarray(np.asarray(x, dtype=np.int64).reshape(-1))
    dim = theta.dim
    adj = adjoint_distribution(mu)
    kes = size_biased_total(mu)
    if tree_mode == _k.TREE_FINITE:
        root_cdf = mu.cdf
    else:
        root_cdf = adj.cdf
    desc = _descriptors(targets, dim)
    nsh = len(targets)
    k0, k1 = philox_key(seed, _task_label(kind, targets, x, theta, mu))
    out_hits = np.zeros((_k.N_CHUNKS, nsh), dtype=np.int64)
    out_joint = np.zeros((_k.N_CHUNKS, nsh, nsh), dtype=np.int64)
    out_stats = np.zeros((_k.N_CHUNKS, 4), dtype=np.float64)
    out_masks = np.zeros(n_samples, dtype=np.uint64)
    _k.visit_kernel(
        n_samples, tree_mode, spine_len, np.uint64(k0), np.uint64(k1), x,
        root_cdf, mu.cdf, np.cumsum(kes), theta.atoms, np.cumsum(theta.probs),
        node_cap, bush_cap, *desc,
        np.uint64((1 << nsh) - 1), out_hits, out_joint, out_stats, out_masks)
    return (out_hits.sum(axis=0), out_joint.sum(axis=0),
            out_stats.sum(axis=0), out_masks)


def _bernoulli(hits: int, n: int) -> tuple[float, float]:
    v = hits / n
    return v, math.sqrt(v * (1.0 - v) / n)


def _frontier_bound(value: float, n: int, gap_x: float, geom: float,
                    d: int) -> float:
    """One-sided bound on missed visits behind capped frontiers.

    geom is the kernel's sum of pending_subtrees * gap^(2-d) over truncated
    non-visiting samples.  Scaling by value * gap_x^(d-2) calibrates the
    visit constant from the probe itself; 3/n stands in when no hit landed.
    """
    scale = max(value, 3.0 / n) * gap_x ** (d - 2)
    return SAFETY_FRONTIER * scale * geom / n


def _spine_frontier_bound(value: float, n: int, gap_x: float, geom: float,
                          d: int, frontier_scale: Optional[float]) -> float:
    """Frontier bound for spine snakes, whose pending subtrees are finite.

    A pending subtree visits at p-scale, C * gap^(2-d).  When no measured
    constant is passed, C falls back to value * gap_x^(d-4): the probe's
    q-value divided by gap_x^2, which upper-bounds the p-constant at desk
    scale since q(z) exceeds gap(z)^2 * p(z) in the probed range.
    """
    if frontier_scale is None:
        frontier_scale = max(value, 3.0 / n) * gap_x ** (d - 4)
    return frontier_scale * geom / n


def _tail_bound(value: float, n: int, gap_x: float, spine_len: int,
                d: int) -> float:
    """One-sided bound on visits carried by the backbone beyond spine_len.

    The backbone is transient for d >= 5; bushes hung at time i >= L visit
    like gap(S_i)^(2-d) and the time sum gives L^((4-d)/2).  Calibrating
    with q(x) ~ C * gap_x^(4-d) leaves (gap_x^2 / L)^((d-4)/2) relative.
    """
    rel = (gap_x * gap_x / max(spine_len, 1)) ** ((d - 4) / 2.0)
    return SAFETY_TAIL * max(value, 3.0 / n) * rel


def estimate_p(target: TargetSet, x, theta, mu: OffspringDistribution,
               n_samples: int, node_cap: int = DEFAULT_NODE_CAP,
               seed: int = 0) -> Estimate:
    """P(critical GW snake from x visits the target)."""
    hits, _, stats, _ = _run_visit_kernel(
        [target], x, theta, mu, _k.TREE_FINITE, n_samples, node_cap, 0, 0,
        seed, "p")
    value, stderr = _bernoulli(int(hits[0]), n_samples)
    gap_x = target.gap_from(x)
    bias = _frontier_bound(value, n_samples, gap_x, stats[1], theta.dim)
    return Estimate(value, stderr, n_samples, bias, seed, {
        "kind": "p", "x": np.asarray(x).reshape(-1).tolist(),
        "node_cap": node_cap, "truncated": int(stats[3]),
        "nodes": int(stats[2])})


def estimate_r(target: TargetSet, x, theta, mu: OffspringDistribution,
               n_samples: int, node_cap: int = DEFAULT_NODE_CAP,
               seed: int = 0) -> Estimate:
    """As estimate_p with the root offspring drawn from the adjoint law."""
    hits, _, stats, _ = _run_visit_kernel(
        [target], x, theta, mu, _k.TREE_ADJOINT, n_samples, node_cap, 0, 0,
        seed, "r")
    value, stderr = _bernoulli(int(hits[0]), n_samples)
    gap_x = target.gap_from(x)
    bias = _frontier_bound(value, n_samples, gap_x, stats[1], theta.dim)
    return Estimate(value, stderr, n_samples, bias, seed, {
        "kind": "r", "x": np.asarray(x).reshape(-1).tolist(),
        "node_cap": node_cap, "truncated": int(stats[3]),
        "nodes": int(stats[2])})


def _spine_estimate(kind, tree_mode, target, x, theta, mu, n_samples,
                    spine_len, bush_cap, seed, frontier_scale=None):
    gap_x = target.gap_from(x)
    d = theta.dim
    stages = []
    if spine_len is None:
        # adaptive doubling: grow the spine until the tail bound drops under
        # max(stderr/2, REL_FLOOR * value), with a hard cap; the floor and
        # cap keep far probes affordable and are reported in the params
        spine_len = SPINE_START
        while spine_len * 2 <= max(SPINE_CAP, SPINE_START):
            n_pilot = min(n_samples, PILOT_SAMPLES)
            hits, _, _, _ = _run_visit_kernel(
                [target], x, theta, mu, tree_mode, n_pilot, 0, spine_len,
                bush_cap, seed, kind)
            v, se = _bernoulli(int(hits[0]), n_pilot)
            tail = _tail_bound(v, n_pilot, gap_x, spine_len, d)
            stages.append({"spine_len": spine_len, "value": v})
            if tail <= max(0.5 * se, REL_FLOOR * max(v, 3.0 / n_pilot)):
                break
            spine_len *= 2
    hits, _, stats, _ = _run_visit_kernel(
        [target], x, theta, mu, tree_mode, n_samples, 0, spine_len, bush_cap,
        seed, kind)
    value, stderr = _bernoulli(int(hits[0]), n_samples)
    bias = (_spine_frontier_bound(value, n_samples, gap_x, stats[1], d,
                                  frontier_scale)
            + _tail_bound(value, n_samples, gap_x, spine_len, d))
    return Estimate(value, stderr, n_samples, bias, seed, {
        "kind": kind, "x": np.asarray(x).reshape(-1).tolist(),
        "spine_len": int(spine_len), "bush_cap": bush_cap,
        "truncated": int(stats[3]), "nodes": int(stats[2]),
        "geom": float(stats[1]), "stages": stages})


def estimate_q(target: TargetSet, x, theta, mu: OffspringDistribution,
               n_samples: int, spine_len: Optional[int] = None,
               bush_cap: int = DEFAULT_BUSH_CAP, seed: int = 0,
               frontier_scale: Optional[float] = None) -> Estimate:
    """P(infinite snake from x visits the target), spine truncated at spine_len.

    spine_len=None picks the length by adaptive doubling on a pilot run.
    frontier_scale, when given, is a measured constant C with
    p_target(z) <= C * gap(z)^(2-d), used to price capped bush frontiers.
    """
    return _spine_estimate("q", _k.TREE_INFINITE, target, x, theta, mu,
                           n_samples, spine_len, bush_cap, seed,
                           frontier_scale)


def estimate_q_incipient(target: TargetSet, x, theta,
                         mu: OffspringDistribution, n_samples: int,
                         spine_len: Optional[int] = None,
                         bush_cap: int = DEFAULT_BUSH_CAP,
                         seed: int = 0,
                         frontier_scale: Optional[float] = None) -> Estimate:
    """As estimate_q for the Kesten (size-biased spine) snake."""
    return _spine_estimate("qbar", _k.TREE_KESTEN, target, x, theta, mu,
                           n_samples, spine_len, bush_cap, seed,
                           frontier_scale)


def estimate_joint(target_a: TargetSet, target_b: TargetSet, x, theta,
                   mu: OffspringDistribution, mode: str, n_samples: int,
                   node_cap: int = DEFAULT_NODE_CAP,
                   spine_len: int = 512, bush_cap: int = DEFAULT_BUSH_CAP,
                   seed: int = 0) -> Estimate:
    """P(snake visits both targets); mode "snake" (finite) or "infinite"."""
    if target_a.overlaps(target_b):
        raise OverlappingSets("joint-visit targets must be disjoint")
    if mode == "snake":
        tree_mode = _k.TREE_FINITE
    elif mode == "infinite":
        tree_mode = _k.TREE_INFINITE
    else:
        raise ValueError("mode must be 'snake' or 'infinite'")
    hits, joint, stats, _ = _run_visit_kernel(
        [target_a, target_b], x, theta, mu, tree_mode, n_samples, node_cap,
        spine_len, bush_cap, seed, "joint-" + mode)
    value, stderr = _bernoulli(int(joint[0, 1]), n_samples)
    gap = min(target_a.gap_from(x), target_b.gap_from(x))
    if tree_mode == _k.TREE_INFINITE:
        bias = (_spine_frontier_bound(value, n_samples, gap, stats[1],
                                      theta.dim, None)
                + _tail_bound(value, n_samples, gap, spine_len, theta.dim))
    else:
        bias = _frontier_bound(value, n_samples, gap, stats[1], theta.dim)
    return Estimate(value, stderr, n_samples, bias, seed, {
        "kind": "joint", "mode": mode,
        "x": np.asarray(x).reshape(-1).tolist(),
        "marginal_a": int(hits[0]) / n_samples,
        "marginal_b": int(hits[1]) / n_samples,
        "truncated": int(stats[3]), "nodes": int(stats[2])})


def estimate_multi(targets: Sequence[TargetSet], x, theta,
                   mu: OffspringDistribution, tree_mode: int, n_samples: int,
                   node_cap: int = DEFAULT_NODE_CAP, spine_len: int = 512,
                   bush_cap: int = DEFAULT_BUSH_CAP, seed: int = 0):
    """Marginal and pairwise joint hits for several targets in one batch.

    Returns (estimates, joint_counts, stats_dict); joint_counts[i, j] for
    i < j counts samples visiting both targets i and j, and
    stats_dict["masks"] holds the per-sample hit bitmasks (bit i = target i)
    for statistics beyond second order.
    """
    hits, joint, stats, masks = _run_visit_kernel(
        list(targets), x, theta, mu, tree_mode, n_samples, node_cap,
        spine_len, bush_cap, seed, "multi")
    ests = []
    for i, t in enumerate(targets):
        v, se = _bernoulli(int(hits[i]), n_samples)
        ests.append(Estimate(v, se, n_samples, 0.0, seed, {
            "kind": "multi", "index": i,
            "x": np.asarray(x).reshape(-1).tolist()}))
    info = {"truncated": int(stats[3]), "nodes": int(stats[2]),
            "geom": float(stats[1]), "masks": masks}
    return ests, joint, info


def visit_count_profile(target: TargetSet, x, theta,
                        mu: OffspringDistribution, checkpoints,
                        n_samples: int, kesten: bool = False,
                        bush_cap: int = DEFAULT_BUSH_CAP, seed: int = 0):
    """Mean cumulative visit counts at spine-prefix horizons.

    Returns (means, stderrs, info).  means[j] estimates the expected number
    of visits among spine vertices 0..checkpoints[j]-1 and their bushes.
    Bush truncation undercounts; the truncated-sample count is reported.
    """
    cps = np.asarray(checkpoints, dtype=np.int64)
    if cps.ndim != 1 or cps.size == 0 or np.any(np.diff(cps) <= 0) or cps[0] < 1:
        raise ValueError("checkpoints must be increasing and >= 1")
    x = np.ascontiguousarray(np.asarray(x, dtype=np.int64).reshape(-1))
    adj = adjoint_distribution(mu)
    kes = size_biased_total(mu)
    desc = _descriptors([target], theta.dim)
    kind = "count-kesten" if kesten else "count"
    k0, k1 = philox_key(seed, _task_label(kind, [target], x, theta, mu))
    out_counts = np.zeros((_k.N_CHUNKS, cps.size), dtype=np.float64)
    out_stats = np.zeros((_k.N_CHUNKS, 2), dtype=np.float64)
    _k.count_kernel(
        n_samples, _k.TREE_KESTEN if kesten else _k.TREE_INFINITE,
        np.uint64(k0), np.uint64(k1), x, adj.cdf, mu.cdf, np.cumsum(kes),
        theta.atoms, np.cumsum(theta.probs), bush_cap, cps, *desc,
        out_counts, out_stats)
    totals = out_counts.sum(axis=0)
    means = totals / n_samples
    # cluster standard error over the fixed sample chunks
    sizes = np.diff((n_samples * np.arange(_k.N_CHUNKS + 1)) // _k.N_CHUNKS)
    resid = out_counts - sizes[:, None] * means[None, :]
    stderrs = np.sqrt((resid ** 2).sum(axis=0)) / n_samples
    info = {"truncated": int(out_stats[:, 0].sum()),
            "nodes": int(out_stats[:, 1].sum())}
    return means, stderrs, info
