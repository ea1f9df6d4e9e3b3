"""Deterministic ground truth on finite windows: visit fixed points and killed Green sums.

The visiting probability of a finitely supported target A solves the one-step
fixed point 1 - p(x) = phi(E_theta[1 - p(x+Y)]) off A with p = 1 on A, where
phi is the offspring pgf; the root-law variant r comes from the adjoint pgf.
With the killing field k = r, the killed Green function G(x, y) is the path
sum of b(gamma) = s(gamma) * prod over non-endpoint vertices of (1 - k), and
this module exposes the identities tying p, r, q and G together: first/last
visit decompositions, p = G(., A), q = sum_y G(., y) r(y), occupation sums,
and ball-restricted path-sum ratios.

Everything is windowed with absorbing boundary, making each value a certified
lower bound for its full-lattice counterpart.  Deficits are reported, never
silently folded in: the fixed point is solved under both boundary closures
(outside never visits / outside surely visits) and the closure gap brackets
the truncation sensitivity, while Green-sum tails outside the window are
bounded by pushing recorded far-field constants through shell integrals.

Solvers are deterministic: fields depend only on (theta, mu, A, window, tol).
Returned fields are never mutated afterwards and are safe to share across
threads; per-window caches are keyed by content digests.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from numpy.polynomial import polynomial as npoly

from ._window import SiteLattice, get_lattice, solve_series
from .errors import (ConfigError, MarginTooSmall, NoConvergence,
                     StepOutsideSupport, WindowTooSmall)
from .lattice import (DEFAULT_TOL, JumpDistribution, WindowSpec,
                      ball_volume_constant, green_constant, theta_norm)
from .snakes import TargetSet
from .trees import OffspringDistribution, adjoint_distribution

PROBABILITY_TAGS = frozenset({"killing", "visit_p", "visit_r", "harmonic"})
FIELD_TAGS = PROBABILITY_TAGS | {"green_column"}

# Plain sweeps below this site count, Newton-accelerated sweeps above.
_NEWTON_SITE_LIMIT = 600_000
_MAX_SWEEPS = 10_000
_NEWTON_MAX_ITERS = 40
# Safety factor on the far-field Green law when bounding tails (the measured
# window band for ||x||^(d-2) g / a_d sits inside [0.85, 1.15]).
_GREEN_SAFETY = 1.25
_TAIL_SAFETY = 2.0
_EDGE_FRACTION = 0.85
# Row/column solves are cached per window only below this size.
_CACHE_SITES_MAX = 3_000_000


# --- fields ----------------------------------------------------------------

@dataclass
class LatticeField:
    """A per-site value array over one window, with its truncation deficit.

    `values` follows the site order of the backing window lattice.  For
    probability-tagged fields the values are clipped into [0, 1] after an
    exact-range check; `deficit` is a sup-norm bound on how far the windowed
    value may sit below its full-lattice counterpart (0 when not applicable),
    with the per-site version in `deficit_values` when available.
    """

    window: WindowSpec
    tag: str
    values: np.ndarray
    deficit: float = 0.0
    deficit_values: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    lattice: Optional[SiteLattice] = field(default=None, repr=False)

    def __post_init__(self):
        if self.tag not in FIELD_TAGS:
            raise ConfigError(f"unknown field tag {self.tag!r}")
        vals = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise ConfigError(f"{self.tag} field contains non-finite values")
        if self.tag in PROBABILITY_TAGS:
            if vals.min() < -1e-9 or vals.max() > 1.0 + 1e-9:
                raise ConfigError(
                    f"{self.tag} field leaves [0,1]: "
                    f"range [{vals.min():.3e}, {vals.max():.3e}]")
            vals = np.clip(vals, 0.0, 1.0)
        self.values = vals

    def _index(self, point) -> int:
        si = int(self.lattice.site_index([point])[0])
        if si < 0:
            raise WindowTooSmall(f"point {tuple(point)} outside field window")
        return si

    def at(self, point) -> float:
        return float(self.values[self._index(point)])

    def deficit_at(self, point) -> float:
        if self.deficit_values is None:
            return self.deficit
        return float(self.deficit_values[self._index(point)])

    def probe(self, points) -> np.ndarray:
        idx = self.lattice.site_index(points)
        if np.any(idx < 0):
            bad = np.asarray(points)[idx < 0][0]
            raise WindowTooSmall(f"probe {tuple(bad)} outside field window")
        return self.values[idx]


@dataclass(frozen=True)
class PathSpec:
    """An explicit lattice path; steps are validated against theta on use."""

    vertices: tuple

    def __post_init__(self):
        verts = tuple(tuple(int(c) for c in v) for v in self.vertices)
        if not verts:
            raise ConfigError("a path needs at least one vertex")
        if len({len(v) for v in verts}) != 1:
            raise ConfigError("path vertices of mixed dimension")
        object.__setattr__(self, "vertices", verts)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def length(self) -> int:
        return len(self.vertices) - 1

    @property
    def endpoint(self) -> tuple:
        return self.vertices[-1]


# --- digests and killing-field plumbing ------------------------------------

def _mu_digest(mu: OffspringDistribution) -> str:
    return hashlib.sha1(np.ascontiguousarray(mu.pmf).tobytes()).hexdigest()[:12]


def _arr_digest(arr: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def _resolve_killing(k_field, theta: Optional[JumpDistribution],
                     window: Optional[WindowSpec]):
    """Accept a LatticeField, a flat site array, or a scalar killing rate."""
    if isinstance(k_field, LatticeField):
        lat = k_field.lattice
        if window is not None and window != k_field.window:
            raise ConfigError("window argument disagrees with the killing field")
        return lat, k_field.values
    if theta is None or window is None:
        raise ConfigError("scalar/array killing needs explicit theta and window")
    lat = get_lattice(theta, window)
    if np.isscalar(k_field):
        k = np.full(lat.n_sites, float(k_field))
    else:
        k = np.asarray(k_field, dtype=np.float64)
        if k.shape != (lat.n_sites,):
            raise ConfigError("killing array does not match the window sites")
    if k.min() < 0.0 or k.max() > 1.0:
        raise ConfigError("killing rates must lie in [0, 1]")
    return lat, k


def _member_mask(lat: SiteLattice, A) -> np.ndarray:
    """Boolean site mask of a TargetSet or explicit point list."""
    if isinstance(A, TargetSet):
        return A.contains_batch(lat.coords.astype(np.int64))
    mask = np.zeros(lat.n_sites, dtype=bool)
    pts = np.asarray(A, dtype=np.int64)
    if pts.size:
        idx = lat.site_index(np.atleast_2d(pts))
        mask[idx[idx >= 0]] = True
    return mask


def _rel_norms(lat: SiteLattice) -> np.ndarray:
    key = ("relnorm",)
    if key not in lat.scratch:
        rel = lat.coords.astype(np.float64) - np.asarray(lat.center, dtype=np.float64)
        lat.scratch[key] = theta_norm(lat.theta, rel)
    return lat.scratch[key]


# --- the nonlinear fixed point ---------------------------------------------

def _boundary_flux(lat: SiteLattice) -> np.ndarray:
    key = ("bflux",)
    if key not in lat.scratch:
        flux = 1.0 - lat.apply_fwd(np.ones(lat.n_sites))
        np.clip(flux, 0.0, None, out=flux)
        lat.scratch[key] = flux
    return lat.scratch[key]


def _solve_closure(lat: SiteLattice, mu: OffspringDistribution,
                   on_mask: np.ndarray, feed: np.ndarray, tol: float,
                   method: str) -> tuple[np.ndarray, np.ndarray, dict]:
    """One boundary closure: returns (p, final step expectation, meta).

    feed(z) is the contribution of out-of-window landing points to the step
    expectation E[1 - p]: the full exit flux treats the outside as never
    visiting (certified lower bound), zero as surely visiting (upper bound);
    anything between encodes an extrapolated boundary value.  The plain mode
    iterates p <- T(p) from zero, which is monotone nondecreasing since T is
    monotone and T(0) >= 0; Newton mode solves T(p) - p = 0 with the
    linearized survival kernel and is used on windows where plain sweeps
    would need too many iterations.
    """
    pmf = mu.pmf
    dpmf = npoly.polyder(pmf)
    off = ~on_mask

    def apply_T(p):
        e = lat.apply_fwd(1.0 - p)
        e += feed
        np.clip(e, 0.0, 1.0, out=e)
        pn = 1.0 - npoly.polyval(e, pmf)
        pn[on_mask] = 1.0
        return pn, e

    if method == "jacobi":
        p = np.zeros(lat.n_sites)
        monotone = True
        for sweep in range(1, _MAX_SWEEPS + 1):
            pn, e = apply_T(p)
            delta = pn - p
            if delta.min() < -1e-12:
                monotone = False
            res = float(np.max(np.abs(delta)))
            p = pn
            if res <= tol:
                return p, e, {"method": "jacobi", "sweeps": sweep,
                              "residual": res, "monotone": monotone}
        raise NoConvergence(
            f"visit fixed point stalled after {_MAX_SWEEPS} sweeps "
            f"(residual {res:.3e} > tol {tol:.1e})")

    # Newton: (I - phi'(e) Theta) delta = T(p) - p, delta zero outside.
    p = on_mask.astype(np.float64)
    offf = off.astype(np.float64)
    inner = 0
    for it in range(1, _NEWTON_MAX_ITERS + 1):
        pn, e = apply_T(p)
        F = pn - p
        res = float(np.max(np.abs(F)))
        if res <= tol:
            return p, e, {"method": "newton", "iterations": it,
                          "inner_sweeps": inner, "residual": res,
                          "monotone": None}
        D = npoly.polyval(e, dpmf) * offf
        np.clip(D, 0.0, 1.0, out=D)
        counter = [0]

        def apply_jac(v):
            counter[0] += 1
            return D * lat.apply_fwd(v)

        delta = solve_series(lat, F, apply_jac, tol=0.02)
        inner += counter[0]
        p = np.clip(p + delta, 0.0, 1.0)
        p[on_mask] = 1.0
    raise NoConvergence(
        f"Newton visit solve stalled after {_NEWTON_MAX_ITERS} iterations "
        f"(residual {res:.3e} > tol {tol:.1e})")


def _fixpoint_bundle(lat: SiteLattice, A: TargetSet, mu: OffspringDistribution,
                     tol: float, method: str = "auto") -> dict:
    """Both-closure fixed point solve for one (A, mu, window); cached."""
    if method == "auto":
        method = "jacobi" if lat.n_sites <= _NEWTON_SITE_LIMIT else "newton"
    key = ("fix", A.digest, _mu_digest(mu), tol, method)
    if key in lat.scratch:
        return lat.scratch[key]
    on_mask = _member_mask(lat, A)
    if not on_mask.any():
        raise MarginTooSmall("target set does not meet the window")
    adj_pmf = adjoint_distribution(mu).pmf
    bundle = {"on_mask": on_mask, "meta": {}}
    flux = _boundary_flux(lat)
    for name, feed in (("lo", flux), ("hi", np.zeros(lat.n_sites))):
        p, e, meta = _solve_closure(lat, mu, on_mask, feed, tol, method)
        r = 1.0 - npoly.polyval(e, adj_pmf)
        r[on_mask] = 1.0
        np.clip(r, 0.0, 1.0, out=r)
        bundle[f"p_{name}"] = p
        bundle[f"r_{name}"] = r
        bundle["meta"][name] = meta
    bundle["dp"] = np.clip(bundle["p_hi"] - bundle["p_lo"], 0.0, None)
    bundle["dr"] = np.clip(bundle["r_hi"] - bundle["r_lo"], 0.0, None)
    lat.scratch[key] = bundle
    return bundle


def solve_visit_fixpoint(A: TargetSet, mu: OffspringDistribution,
                         theta: JumpDistribution, window: WindowSpec,
                         tol: float = DEFAULT_TOL, method: str = "auto",
                         ) -> tuple[LatticeField, LatticeField]:
    """Visiting-probability field p and its root-law companion r for A.

    p = 1 on A; off A the nonlinear one-step fixed point is iterated to
    residual < tol.  Outside the window counts as never visiting, so both
    fields are certified lower bounds; the reported deficit is the gap to the
    opposite closure (outside surely visiting), solved alongside.

    Requires A to sit inside the window with margin >= radius/2, except in
    the degenerate case where A covers every window site (then p == r == 1
    exactly and no boundary sensitivity exists).
    """
    lat = get_lattice(theta, window)
    on_mask = _member_mask(lat, A)
    if not on_mask.any():
        raise MarginTooSmall("target set does not meet the window")
    if not on_mask.all():
        reach = float(_rel_norms(lat)[on_mask].max())
        if reach > 0.5 * window.radius:
            raise MarginTooSmall(
                f"target reaches adapted radius {reach:.2f}, over half the "
                f"window radius {window.radius:.2f}")
    bundle = _fixpoint_bundle(lat, A, mu, tol, method)
    meta = {"solver": bundle["meta"], "closure": "lower"}
    p_field = LatticeField(window, "visit_p", bundle["p_lo"],
                           deficit=float(bundle["dp"].max()),
                           deficit_values=bundle["dp"], meta=meta, lattice=lat)
    r_field = LatticeField(window, "visit_r", bundle["r_lo"],
                           deficit=float(bundle["dr"].max()),
                           deficit_values=bundle["dr"], meta=meta, lattice=lat)
    return p_field, r_field


def killing_field(A: TargetSet, mu: OffspringDistribution,
                  theta: JumpDistribution, window: WindowSpec,
                  tol: float = DEFAULT_TOL) -> LatticeField:
    """The killing field k = r_A as used by every killed Green sum."""
    _, r_field = solve_visit_fixpoint(A, mu, theta, window, tol)
    return LatticeField(r_field.window, "killing", r_field.values,
                        deficit=r_field.deficit,
                        deficit_values=r_field.deficit_values,
                        meta=dict(r_field.meta), lattice=r_field.lattice)


# Radiation-closure calibration band, as fractions of the window radius.
_RAD_BAND = (0.45, 0.65)


def solve_visit_radiation(A: TargetSet, mu: OffspringDistribution,
                          theta: JumpDistribution, window: WindowSpec,
                          tol: float = DEFAULT_TOL, method: str = "auto",
                          ) -> tuple[LatticeField, LatticeField]:
    """Visit fields under a calibrated open boundary (estimate, not a bound).

    The hard closures pin 1 - p outside the window to 1 or 0; both distort
    the far field, the certified lower one by several percent at half the
    window radius.  Here the outside value is extrapolated instead: the lower
    solve is fit on a mid-window band as p * |z|^(d-2) = alpha + beta / |z|
    (distances from the target centroid), boundary-crossing mass is fed back
    with that law, and the fixed point is re-solved once.  The result lies
    between the two hard closures by monotonicity.

    Deficit semantics differ from solve_visit_fixpoint: values - deficit_values
    is the certified lower-bound field, so the deficit measures the applied
    non-certified correction rather than a truncation gap.  Fit coefficients
    and band are in meta["radiation"].
    """
    lat = get_lattice(theta, window)
    if method == "auto":
        method = "jacobi" if lat.n_sites <= _NEWTON_SITE_LIMIT else "newton"
    bundle = _fixpoint_bundle(lat, A, mu, tol, method)
    on_mask = bundle["on_mask"]
    if on_mask.all():
        return solve_visit_fixpoint(A, mu, theta, window, tol, method)
    reach = float(_rel_norms(lat)[on_mask].max())
    if reach > 0.35 * window.radius:
        raise MarginTooSmall(
            f"target reaches adapted radius {reach:.2f}; the radiation fit "
            f"band needs it under {0.35 * window.radius:.2f}")
    key = ("rad", A.digest, _mu_digest(mu), tol, method)
    if key not in lat.scratch:
        d = lat.dim
        centroid = lat.coords[on_mask].astype(np.float64).mean(axis=0)
        rel = theta_norm(lat.theta, lat.coords.astype(np.float64) - centroid)
        lo, hi = (f * window.radius for f in _RAD_BAND)
        band = (~on_mask) & (rel >= lo) & (rel <= hi)
        if band.sum() < 16:
            raise WindowTooSmall(
                "radiation closure needs a populated mid-window band "
                f"[{lo:.1f}, {hi:.1f}]; got {int(band.sum())} sites")
        rb = rel[band]
        yb = bundle["p_lo"][band] * rb ** (d - 2)
        design = np.column_stack([np.ones_like(rb), 1.0 / rb])
        (alpha, beta), *_ = np.linalg.lstsq(design, yb, rcond=None)
        fit_resid = float(np.max(np.abs(design @ (alpha, beta) - yb)))
        feed = np.zeros(lat.n_sites)
        for a, idx in lat.exit_pairs():
            w = lat.w_fwd[a]
            if w == 0.0 or len(idx) == 0:
                continue
            land = lat.coords[idx].astype(np.float64) + lat.dirs[a] - centroid
            rl = theta_norm(lat.theta, land)
            p_ext = np.clip((alpha + beta / rl) * rl ** (2 - d), 0.0, 1.0)
            feed[idx] += w * (1.0 - p_ext)
        p, e, meta = _solve_closure(lat, mu, on_mask, feed, tol, method)
        r = 1.0 - npoly.polyval(e, adjoint_distribution(mu).pmf)
        r[on_mask] = 1.0
        p = np.clip(p, bundle["p_lo"], bundle["p_hi"])
        r = np.clip(r, bundle["r_lo"], bundle["r_hi"])
        meta = {"solver": meta, "closure": "radiation",
                "radiation": {"alpha": float(alpha), "beta": float(beta),
                              "band": (lo, hi), "fit_residual": fit_resid}}
        lat.scratch[key] = (p, r, meta)
    p, r, meta = lat.scratch[key]
    dp = np.clip(p - bundle["p_lo"], 0.0, None)
    dr = np.clip(r - bundle["r_lo"], 0.0, None)
    p_field = LatticeField(window, "visit_p", p, deficit=float(dp.max()),
                           deficit_values=dp, meta=meta, lattice=lat)
    r_field = LatticeField(window, "visit_r", r, deficit=float(dr.max()),
                           deficit_values=dr, meta=meta, lattice=lat)
    return p_field, r_field


# --- path weights ----------------------------------------------------------

def path_weight(gamma, theta: JumpDistribution, k_field=0.0,
                window: Optional[WindowSpec] = None) -> float:
    """b(gamma): step probabilities times survival at non-endpoint vertices."""
    verts = gamma.vertices if isinstance(gamma, PathSpec) else \
        PathSpec(tuple(map(tuple, gamma))).vertices
    prob_of = {tuple(v): p for v, p in zip(theta.atoms.tolist(),
                                           theta.probs.tolist())}
    weight = 1.0
    for a, b in zip(verts[:-1], verts[1:]):
        step = tuple(y - x for x, y in zip(a, b))
        if step not in prob_of:
            raise StepOutsideSupport(f"step {step} not in the step support")
        weight *= prob_of[step]
    if isinstance(k_field, LatticeField):
        for v in verts[:-1]:
            weight *= 1.0 - k_field.at(v)
    elif np.isscalar(k_field):
        weight *= (1.0 - float(k_field)) ** (len(verts) - 1)
    else:
        raise ConfigError("k_field must be a LatticeField or a scalar")
    return weight


# --- killed Green functions ------------------------------------------------

def _killed_col(lat: SiteLattice, k: np.ndarray, target, tol: float) -> np.ndarray:
    """G(z, target) for every window site z (survival-weighted forward solve)."""
    ti = int(lat.site_index([target])[0])
    if ti < 0:
        raise WindowTooSmall(f"target {tuple(target)} outside window")
    key = ("kcol", _arr_digest(k), ti, tol)
    if key in lat.scratch:
        return lat.scratch[key]
    sur = 1.0 - k
    rhs = np.zeros(lat.n_sites)
    rhs[ti] = 1.0
    out = solve_series(lat, rhs, lambda v: sur * lat.apply_fwd(v), tol)
    if lat.n_sites <= _CACHE_SITES_MAX:
        lat.scratch[key] = out
    return out


def _killed_row(lat: SiteLattice, k: np.ndarray, source, tol: float) -> np.ndarray:
    """G(source, z) for every window site z (adjoint-direction solve)."""
    si = int(lat.site_index([source])[0])
    if si < 0:
        raise WindowTooSmall(f"source {tuple(source)} outside window")
    key = ("krow", _arr_digest(k), si, tol)
    if key in lat.scratch:
        return lat.scratch[key]
    sur = 1.0 - k
    rhs = np.zeros(lat.n_sites)
    rhs[si] = 1.0
    out = solve_series(lat, rhs, lambda v: lat.apply_bwd(sur * v), tol)
    if lat.n_sites <= _CACHE_SITES_MAX:
        lat.scratch[key] = out
    return out


def green_killed(k_field, x, y, window: Optional[WindowSpec] = None,
                 tol: float = DEFAULT_TOL,
                 theta: Optional[JumpDistribution] = None) -> float:
    """Killed Green value G(x, y) on the window (certified lower bound)."""
    lat, k = _resolve_killing(k_field, theta, window)
    col = _killed_col(lat, k, y, tol)
    xi = int(lat.site_index([x])[0])
    if xi < 0:
        raise WindowTooSmall(f"source {tuple(x)} outside window")
    return float(col[xi])


def green_killed_with_deficit(k_field, x, y, window: Optional[WindowSpec] = None,
                              tol: float = DEFAULT_TOL,
                              theta: Optional[JumpDistribution] = None,
                              ) -> tuple[float, float]:
    """G(x, y) plus a one-bounce estimate of the path mass lost to the window.

    Killed paths weigh at most their free counterparts, so the free-walk exit
    flux pushed back through the far-field Green law bounds the truncation
    scale; it is an estimate in the same sense as the free-Green variant.
    """
    from .lattice import _exit_flux, _green_row
    lat, k = _resolve_killing(k_field, theta, window)
    value = green_killed(k_field, x, y, window, tol, theta)
    th = lat.theta
    row = _green_row(th, lat, np.asarray(x, dtype=np.int64), tol)
    pts, flux = _exit_flux(lat, row, forward=True)
    a_d = green_constant(th)
    deficit = float(np.sum(
        flux * a_d * _GREEN_SAFETY *
        theta_norm(th, pts - np.asarray(y, dtype=np.int64)) ** (2 - th.dim)))
    return value, deficit


def green_column_field(k_field, y, window: Optional[WindowSpec] = None,
                       tol: float = DEFAULT_TOL,
                       theta: Optional[JumpDistribution] = None) -> LatticeField:
    """The full column G(., y) as a field (values are not probabilities)."""
    lat, k = _resolve_killing(k_field, theta, window)
    col = _killed_col(lat, k, y, tol)
    win = k_field.window if isinstance(k_field, LatticeField) else window
    return LatticeField(win, "green_column", col,
                        meta={"target": tuple(int(c) for c in y)}, lattice=lat)


def harmonic_measure(B, k_field, x, y, window: Optional[WindowSpec] = None,
                     tol: float = DEFAULT_TOL,
                     theta: Optional[JumpDistribution] = None) -> float:
    """Path sum x -> y over paths whose interior vertices stay in B.

    B constrains strictly interior vertices only; start and endpoint are free.
    B may be a TargetSet, an explicit point list, or None for no restriction
    (recovering the killed Green value).
    """
    lat, k = _resolve_killing(k_field, theta, window)
    sur = 1.0 - k
    xi = int(lat.site_index([x])[0])
    yi = int(lat.site_index([y])[0])
    if xi < 0 or yi < 0:
        raise WindowTooSmall("harmonic measure endpoints must lie in the window")
    if B is None:
        keep = np.ones(lat.n_sites, dtype=np.int8)
        bdig = "all"
    else:
        mask = _member_mask(lat, B)
        keep = mask.astype(np.int8)
        bdig = _arr_digest(keep)
    key = ("hcol", _arr_digest(k), bdig, yi, tol)
    if key in lat.scratch:
        inner = lat.scratch[key]
    else:
        rhs = np.zeros(lat.n_sites)
        rhs[yi] = 1.0
        inner = solve_series(
            lat, rhs, lambda v: sur * lat.apply_fwd_restricted(v, keep), tol)
        if lat.n_sites <= _CACHE_SITES_MAX:
            lat.scratch[key] = inner
    value = float(sur[xi] * lat.apply_fwd(inner)[xi])
    if xi == yi:
        value += 1.0
    return value


# --- the four first/last-visit decompositions ------------------------------

def check_first_visit(A: TargetSet, B, a, b, window: WindowSpec,
                      mu: OffspringDistribution, theta: JumpDistribution,
                      tol: float = DEFAULT_TOL) -> np.ndarray:
    """Residuals of the four path decompositions at the first/last visit to B.

    For a in B, b outside B, with k = r_A, each window-confined path a -> b
    splits uniquely at its first vertex outside B (or last vertex inside B;
    likewise for b -> a), giving four exact identities between G and the
    B-restricted path sums.  Returns the four absolute residuals.
    """
    lat = get_lattice(theta, window)
    maskB = _member_mask(lat, B)
    ai = int(lat.site_index([a])[0])
    bi = int(lat.site_index([b])[0])
    if ai < 0 or bi < 0:
        raise WindowTooSmall("probe points must lie in the window")
    if not maskB[ai]:
        raise ConfigError("probe a must lie in B")
    if maskB[bi]:
        raise ConfigError("probe b must lie outside B")
    bundle = _fixpoint_bundle(lat, A, mu, tol)
    k = bundle["r_lo"]
    sur = 1.0 - k
    keepB = maskB.astype(np.int8)
    keepBc = (~maskB).astype(np.int8)

    def restricted(rhs, keep):
        return solve_series(
            lat, rhs, lambda v: sur * lat.apply_fwd_restricted(v, keep), tol)

    u_b = _killed_col(lat, k, b, tol)
    u_a = _killed_col(lat, k, a, tol)
    grow_a = _killed_row(lat, k, a, tol)
    grow_b = _killed_row(lat, k, b, tol)
    delta_a = np.zeros(lat.n_sites)
    delta_a[ai] = 1.0
    delta_b = np.zeros(lat.n_sites)
    delta_b[bi] = 1.0

    # first visit to B^c on a -> b:  G(a,b) = sum_{z not in B} H^B(a,z) G(z,b)
    m1 = np.where(maskB, 0.0, u_b)
    rhs1 = m1[ai] + sur[ai] * lat.apply_fwd(restricted(m1, keepB))[ai]
    res1 = abs(u_b[ai] - rhs1)
    # last visit to B on a -> b:     G(a,b) = sum_{z in B} G(a,z) H^{B^c}(z,b)
    hcol2 = delta_b + sur * lat.apply_fwd(restricted(delta_b, keepBc))
    rhs2 = float(np.sum(grow_a[maskB] * hcol2[maskB]))
    res2 = abs(u_b[ai] - rhs2)
    # first visit to B on b -> a:    G(b,a) = sum_{z in B} H^{B^c}(b,z) G(z,a)
    m3 = np.where(maskB, u_a, 0.0)
    rhs3 = m3[bi] + sur[bi] * lat.apply_fwd(restricted(m3, keepBc))[bi]
    res3 = abs(u_a[bi] - rhs3)
    # last visit to B^c on b -> a:   G(b,a) = sum_{z not in B} G(b,z) H^B(z,a)
    hcol4 = delta_a + sur * lat.apply_fwd(restricted(delta_a, keepB))
    rhs4 = float(np.sum(grow_b[~maskB] * hcol4[~maskB]))
    res4 = abs(u_a[bi] - rhs4)
    return np.array([res1, res2, res3, res4])


# --- Green-sum forms of p and q --------------------------------------------

def p_via_green(A: TargetSet, mu: OffspringDistribution,
                theta: JumpDistribution, window: WindowSpec,
                tol: float = DEFAULT_TOL) -> LatticeField:
    """G_A(x, A) = sum_{y in A} G_A(x, y) as a field over the window.

    With k = r_A the survival factor vanishes on A, so the Green sum counts
    first-visit paths only and reproduces the fixed-point p off A (and equals
    1 on A exactly).  The deficit carried over is the closure sandwich of p.
    """
    lat = get_lattice(theta, window)
    bundle = _fixpoint_bundle(lat, A, mu, tol)
    sur = 1.0 - bundle["r_lo"]
    rhs = bundle["on_mask"].astype(np.float64)
    u = solve_series(lat, rhs, lambda v: sur * lat.apply_fwd(v), tol)
    return LatticeField(window, "green_column", u,
                        deficit=float(bundle["dp"].max()),
                        deficit_values=bundle["dp"],
                        meta={"kind": "G_A(.,A)", "target": A.digest},
                        lattice=lat)


def q_via_green(A: TargetSet, x, mu: OffspringDistribution,
                theta: JumpDistribution, window: WindowSpec,
                tol: float = DEFAULT_TOL) -> float:
    """sum_y G_A(x, y) r_A(y) over the window (certified lower bound)."""
    return q_via_green_with_deficit(A, x, mu, theta, window, tol)[0]


def q_via_green_with_deficit(A: TargetSet, x, mu: OffspringDistribution,
                             theta: JumpDistribution, window: WindowSpec,
                             tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """Windowed q plus a recorded-constant bound on the missing mass.

    Three contributions are reported together: the closure sandwich of r
    inside the window, the shell-integral tail of sum g * r outside (with the
    edge-calibrated coefficient of r and the safety-factored Green law), and
    a one-bounce term for row mass absorbed at the boundary.
    """
    lat = get_lattice(theta, window)
    d = theta.dim
    if d < 5:
        raise ConfigError("the q Green sum needs d >= 5 for a finite tail")
    bundle = _fixpoint_bundle(lat, A, mu, tol)
    r = bundle["r_lo"]
    grow = _killed_row(lat, r, x, tol)
    value = float(grow @ r)

    rel = _rel_norms(lat)
    R = window.radius
    # The surely-visits closure blows r up near the boundary, so the raw
    # sandwich gap is useless there; cap the possible excess over r_lo with
    # the far-field law calibrated on the certified solve in the mid band.
    mid = (rel >= 0.4 * R) & (rel <= 0.6 * R)
    dr_eff = bundle["dr"]
    if mid.any():
        c_mid = _TAIL_SAFETY * float(np.max(r[mid] * rel[mid] ** (d - 2)))
        law = np.clip(c_mid * rel ** (2 - d), 0.0, 1.0)
        dr_eff = np.minimum(dr_eff, np.clip(law - r, 0.0, None))
    closure = float(grow @ dr_eff)
    edge = rel >= _EDGE_FRACTION * R
    c_r = _TAIL_SAFETY * float(np.max(r[edge] * rel[edge] ** (d - 2)))
    s = theta_norm(theta, np.asarray(x, dtype=np.float64)
                   - np.asarray(window.center, dtype=np.float64))
    if s >= 0.9 * R:
        raise WindowTooSmall("probe too close to the window edge for a tail bound")
    a_d = green_constant(theta)
    v_d = ball_volume_constant(theta)
    tail = (d * v_d * a_d * _GREEN_SAFETY * c_r
            * (1.0 - s / R) ** (2 - d) * R ** (4 - d) / (d - 4))
    c_q = _TAIL_SAFETY * value * max(s, 1.0) ** (d - 4)
    bounce = 0.0
    pushed = grow * (1.0 - r)
    center = np.asarray(window.center, dtype=np.float64)
    for a, idx in lat.exit_pairs():
        w = lat.w_fwd[a]
        if w == 0.0 or len(idx) == 0:
            continue
        out_pts = lat.coords[idx].astype(np.float64) + lat.dirs[a] - center
        bounce += float(np.sum(
            pushed[idx] * w * c_q * theta_norm(theta, out_pts) ** (4 - d)))
    return value, closure + tail + bounce


# --- restricted path sums and occupation identities ------------------------

def restriction_ratio(A: TargetSet, x, mu: OffspringDistribution,
                      theta: JumpDistribution, n: int,
                      window: Optional[WindowSpec] = None,
                      tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """Ball-restricted over unrestricted path-sum ratios for p and q forms.

    ratio_p confines first-visit paths x -> A to the ball of radius 1.1 n,
    ratio_q confines the vertex-count-weighted paths to radius 4 n; both are
    compared against the same sums over the whole window (which must contain
    the 4n ball).  A and x must sit inside the n ball.
    """
    d = theta.dim
    if window is None:
        window = WindowSpec((0,) * d, math.ceil(4.5 * n))
    if window.radius < 4 * n:
        raise WindowTooSmall("restriction study needs window radius >= 4n")
    lat = get_lattice(theta, window)
    rel = _rel_norms(lat)
    xi = int(lat.site_index([x])[0])
    mask_A = _member_mask(lat, A)
    if xi < 0 or not mask_A.any():
        raise WindowTooSmall("x and A must lie in the window")
    if float(rel[mask_A].max()) > n or float(rel[xi]) > n:
        raise ConfigError("A and x must lie inside the n ball")
    bundle = _fixpoint_bundle(lat, A, mu, tol)
    sur = 1.0 - bundle["r_lo"]
    rhs = mask_A.astype(np.float64)
    keep11 = (rel <= 1.1 * n).astype(np.int8)
    keep4 = (rel <= 4.0 * n).astype(np.int8)

    def killed(v):
        return sur * lat.apply_fwd(v)

    def killed_in(keep):
        return lambda v: sur * lat.apply_fwd_restricted(v, keep)

    u_full = solve_series(lat, rhs, killed, tol)
    v_full = solve_series(lat, u_full, killed, tol)
    u_11 = solve_series(lat, rhs, killed_in(keep11), tol)
    u_4 = solve_series(lat, rhs, killed_in(keep4), tol)
    v_4 = solve_series(lat, u_4, killed_in(keep4), tol)
    ratio_p = float(u_11[xi] / u_full[xi])
    ratio_q = float(v_4[xi] / v_full[xi])
    return min(ratio_p, 1.0), min(ratio_q, 1.0)


class ConvolvedCheck(NamedTuple):
    lhs_q: float
    lhs_p: float
    rhs_q: float
    rhs_p: float


def convolved_sum_check(A: TargetSet, B, x, mu: OffspringDistribution,
                        theta: JumpDistribution, window: WindowSpec,
                        tol: float = DEFAULT_TOL) -> ConvolvedCheck:
    """Both sides of the ball-convolution comparisons for q and p.

    lhs_* = sum over z in B of G_A(x, z) * (q or p)(z); rhs_* = (diam B)^2
    times the same quantity at x.  diam is the adapted-norm diameter of B;
    for singletons it degenerates to 0 and callers should compare against a
    unit-scale denominator instead.
    """
    lat = get_lattice(theta, window)
    bundle = _fixpoint_bundle(lat, A, mu, tol)
    r = bundle["r_lo"]
    sur = 1.0 - r
    maskB = _member_mask(lat, B)
    if not maskB.any():
        raise WindowTooSmall("B does not meet the window")
    xi = int(lat.site_index([x])[0])
    if xi < 0:
        raise WindowTooSmall(f"probe {tuple(x)} outside window")

    def killed(v):
        return sur * lat.apply_fwd(v)

    q_field = solve_series(lat, r, killed, tol)
    u_field = solve_series(lat, bundle["on_mask"].astype(np.float64), killed, tol)
    grow = _killed_row(lat, r, x, tol)
    pts = lat.coords[maskB].astype(np.float64)
    diam = 0.0
    if maskB.sum() > 1:
        diff = pts[:, None, :] - pts[None, :, :]
        diam = float(theta_norm(lat.theta, diff.reshape(-1, lat.dim)).max())
    lhs_q = float(np.sum(grow[maskB] * q_field[maskB]))
    lhs_p = float(np.sum(grow[maskB] * u_field[maskB]))
    return ConvolvedCheck(lhs_q, lhs_p,
                          diam ** 2 * float(q_field[xi]),
                          diam ** 2 * float(u_field[xi]))


def occupation_pathsum(A: TargetSet, B, x, mu: OffspringDistribution,
                       theta: JumpDistribution, window: WindowSpec,
                       tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """The occupation identity computed two ways (exact up to solver tol).

    sum_{z in B} G_A(x, z) p_A(z) equals the path sum over first-visit paths
    x -> A weighted by their number of vertices inside B.  The left form dots
    the Green row at x against p; the right form runs the transposed solve
    with source 1_B * p and reads it at x.  Both target the same number
    through different iterations, so their agreement certifies the identity.
    """
    lat = get_lattice(theta, window)
    bundle = _fixpoint_bundle(lat, A, mu, tol)
    r = bundle["r_lo"]
    sur = 1.0 - r
    maskB = _member_mask(lat, B)
    xi = int(lat.site_index([x])[0])
    if xi < 0:
        raise WindowTooSmall(f"probe {tuple(x)} outside window")

    def killed(v):
        return sur * lat.apply_fwd(v)

    u_field = solve_series(lat, bundle["on_mask"].astype(np.float64), killed, tol)
    grow = _killed_row(lat, r, x, tol)
    direct = float(np.sum(grow[maskB] * u_field[maskB]))
    w = solve_series(lat, np.where(maskB, u_field, 0.0), killed, tol)
    return direct, float(w[xi])


# --- export ----------------------------------------------------------------

_HEADER = struct.Struct("<id16s")


def write_field(field_obj: LatticeField, path) -> None:
    """Flat binary export: dim, radius, tag header then the row-major cube.

    Sites outside the (origin-centered) window ball are NaN in the cube.
    """
    if any(c != 0 for c in field_obj.window.center):
        raise ConfigError("binary export assumes an origin-centered window")
    lat = field_obj.lattice
    cube = np.full(int(np.prod(lat.cube_shape)), np.nan)
    sel = lat.idx_cube >= 0
    cube[sel] = field_obj.values[lat.idx_cube[sel]]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(lat.dim, float(field_obj.window.radius),
                              field_obj.tag.encode().ljust(16, b"\0")))
        fh.write(cube.astype("<f8").tobytes())


def read_field(path, theta: JumpDistribution) -> LatticeField:
    """Rebuild a field written by write_field (deficit data is not stored)."""
    with open(path, "rb") as fh:
        dim, radius, raw_tag = _HEADER.unpack(fh.read(_HEADER.size))
        tag = raw_tag.rstrip(b"\0").decode()
        if dim != theta.dim:
            raise ConfigError(f"field dimension {dim} != step dimension {theta.dim}")
        window = WindowSpec((0,) * dim, radius)
        lat = get_lattice(theta, window)
        cube = np.frombuffer(fh.read(), dtype="<f8")
        if cube.size != int(np.prod(lat.cube_shape)):
            raise ConfigError("field payload does not match the window cube")
    sel = lat.idx_cube >= 0
    values = np.empty(lat.n_sites)
    values[lat.idx_cube[sel]] = cube[sel]
    return LatticeField(window, tag, values, meta={"loaded_from": str(path)},
                        lattice=lat)


def field_summary(field_obj: LatticeField, probes) -> dict:
    """JSON-ready probe summary of a field."""
    pts = np.atleast_2d(np.asarray(probes, dtype=np.int64))
    vals = field_obj.probe(pts)
    return {
        "tag": field_obj.tag,
        "dim": int(pts.shape[1]),
        "radius": float(field_obj.window.radius),
        "center": [int(c) for c in field_obj.window.center],
        "deficit": float(field_obj.deficit),
        "probes": [{"point": [int(c) for c in p], "value": float(v)}
                   for p, v in zip(pts, vals)],
    }


def summary_to_json(summary: dict) -> str:
    return json.dumps(summary, sort_keys=True, indent=2)
