"""Step distributions on Z^d, the adapted norm, and free Green functions.

The step distribution (jump law of the underlying walk) must be centered,
finitely supported, and its support must generate the full integer lattice.
Its covariance Q defines the adapted norm ||x|| = sqrt(x' Qinv x / d), under
which the walk is asymptotically isotropic; by convention ||0|| = 0.5 so that
power laws in ||x|| stay finite at the origin.

Green values on a finite window are certified lower bounds (absorbing
boundary).  The `*_with_deficit` variants additionally return a one-bounce
boundary-correction estimate of the truncated mass, computed by pushing the
absorbed exit flux back through the far-field asymptotics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadProbabilities, ConfigError, DegenerateCovariance,
                     NonCentered, StrictSubgroup, WindowTooSmall)

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class JumpDistribution:
    """Validated step distribution: atoms (n, d), probabilities (n,)."""

    dim: int
    atoms: np.ndarray
    probs: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray
    step_range: float          # max Euclidean atom length
    symmetric: bool
    name: str = ""

    def __repr__(self):
        tag = self.name or f"{len(self.probs)} atoms"
        return f"JumpDistribution(d={self.dim}, {tag})"


@dataclass(frozen=True)
class WindowSpec:
    """Ball window {z : ||z - center|| <= radius} with absorbing boundary."""

    center: tuple
    radius: float
    boundary: str = "absorb"

    def __post_init__(self):
        if self.boundary != "absorb":
            raise ConfigError(f"unsupported boundary policy: {self.boundary!r}")
        if self.radius <= 0:
            raise ConfigError("window radius must be positive")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))


def _full_lattice(vectors) -> bool:
    """True iff the integer span of the given vectors is all of Z^d.

    Triangularization over Z with exact integers: repeatedly Euclid-reduce the
    rows sharing a pivot column; the span is full iff every pivot is +-1.
    """
    rows = [list(map(int, v)) for v in vectors]
    rows = [r for r in rows if any(r)]
    if not rows:
        return False
    d = len(rows[0])
    for col in range(d):
        idx = [i for i, r in enumerate(rows) if r[col] != 0]
        if not idx:
            return False
        while len(idx) > 1:
            idx.sort(key=lambda i: abs(rows[i][col]))
            base = rows[idx[0]]
            a = base[col]
            for i in idx[1:]:
                q = rows[i][col] // a
                rows[i] = [x - q * y for x, y in zip(rows[i], base)]
            idx = [i for i in idx if rows[i][col] != 0]
        piv = rows.pop(idx[0])
        if abs(piv[col]) != 1:
            return False
    return True


def build_jump_distribution(atoms, probs, name: str = "",
                            tol: float = 1e-12) -> JumpDistribution:
    """Validate and assemble a step distribution.

    Checks: probabilities clean and summing to 1, zero mean, positive definite
    covariance, and support generating Z^d (otherwise StrictSubgroup).
    """
    atoms = np.asarray(atoms, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if atoms.ndim != 2 or len(atoms) != len(probs) or len(atoms) == 0:
        raise BadProbabilities("atoms must be (n, d) with matching probabilities")
    if len({tuple(v) for v in atoms.tolist()}) != len(atoms):
        raise BadProbabilities("duplicate atoms")
    if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
        raise BadProbabilities("probabilities must be finite and positive")
    if abs(probs.sum() - 1.0) > tol:
        raise BadProbabilities(f"probabilities sum to {probs.sum()!r}, not 1")
    d = atoms.shape[1]
    mean = probs @ atoms
    if np.max(np.abs(mean)) > tol:
        raise NonCentered(f"mean {mean.tolist()} is not zero")
    cov = (atoms.T * probs) @ atoms.astype(np.float64)
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= tol * max(eig[-1], 1.0):
        raise DegenerateCovariance("covariance not positive definite")
    if not _full_lattice(atoms):
        raise StrictSubgroup("support generates a strict subgroup of Z^d")
    atom_set = {tuple(v) for v in atoms.tolist()}
    pmap = {tuple(v): p for v, p in zip(atoms.tolist(), probs)}
    symmetric = all(tuple(-c for c in v) in atom_set
                    and abs(pmap[tuple(-c for c in v)] - p) <= tol
                    for v, p in pmap.items())
    return JumpDistribution(
        dim=d, atoms=atoms, probs=probs, cov=cov,
        cov_inv=np.linalg.inv(cov),
        step_range=float(np.max(np.linalg.norm(atoms, axis=1))),
        symmetric=symmetric, name=name)


def simple_walk(d: int) -> JumpDistribution:
    """Nearest-neighbor walk on Z^d, each of the 2d unit steps with mass 1/2d."""
    eye = np.eye(d, dtype=np.int64)
    atoms = np.concatenate([eye, -eye])
    probs = np.full(2 * d, 1.0 / (2 * d))
    return build_jump_distribution(atoms, probs, name=f"srw{d}")


_PRESETS = {}


def theta_preset(name: str) -> JumpDistribution:
    """Named step presets: 'srw1' .. 'srw8'."""
    if name not in _PRESETS:
        if name.startswith("srw") and name[3:].isdigit():
            d = int(name[3:])
            if not 1 <= d <= 8:
                raise ConfigError(f"unsupported walk dimension in preset {name!r}")
            _PRESETS[name] = simple_walk(d)
        else:
            raise ConfigError(f"unknown step preset {name!r}")
    return _PRESETS[name]


def theta_norm(theta: JumpDistribution, x) -> float | np.ndarray:
    """Adapted norm sqrt(x' Qinv x / d); the origin maps to 0.5."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    q = np.einsum('ij,jk,ik->i', pts, theta.cov_inv, pts) / theta.dim
    out = np.sqrt(q)
    out[np.all(pts == 0, axis=1)] = 0.5
    return float(out[0]) if single else out


def euclidean_norm(x) -> float | np.ndarray:
    """Euclidean length with the same origin convention |0| = 0.5."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.linalg.norm(pts, axis=1)
    out[out == 0] = 0.5
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def green_constant(theta: JumpDistribution) -> float:
    """Far-field Green coefficient: g(x) ~ a_d ||x||^(2-d), d >= 3."""
    d = theta.dim
    if d < 3:
        raise ConfigError("Green coefficient requires d >= 3")
    det = np.linalg.det(theta.cov)
    return math.gamma((d - 2) / 2) / (
        2.0 * d ** ((d - 2) / 2) * math.pi ** (d / 2) * math.sqrt(det))


def occupation_constant(theta: JumpDistribution) -> float:
    """Coefficient of ||x||^(4-d) in sum_n (n+1) P(S_n = x), d >= 5.

    Local-CLT composition: integrating n * (2 pi n)^(-d/2) exp(-d||x||^2/2n)
    gives Gamma((d-4)/2) / (4 d^((d-4)/2) pi^(d/2) sqrt(det Q)).
    """
    d = theta.dim
    if d < 5:
        raise ConfigError("occupation coefficient requires d >= 5")
    det = np.linalg.det(theta.cov)
    return math.gamma((d - 4) / 2) / (
        4.0 * d ** ((d - 4) / 2) * math.pi ** (d / 2) * math.sqrt(det))


def ball_volume_constant(theta: JumpDistribution) -> float:
    """Leading coefficient of #{z : ||z|| <= r} = V r^d (ellipsoid volume)."""
    d = theta.dim
    unit = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return unit * d ** (d / 2) * math.sqrt(np.linalg.det(theta.cov))


# --- window Green functions ----------------------------------------------

def _check_margin(theta, lattice, x, what="x"):
    from . import _window  # noqa: F401  (lattice built by caller)
    rel = np.asarray(x, dtype=np.float64) - np.asarray(lattice.center, dtype=np.float64)
    r_here = theta_norm(theta, rel)
    step = theta_norm(theta, theta.atoms).max()
    if r_here > lattice.radius - step:
        raise WindowTooSmall(
            f"{what} at adapted radius {r_here:.3f} leaves no full step of margin "
            f"inside window radius {lattice.radius:.3f}")


def _green_row(theta, lattice, source, tol):
    """Window-truncated g(source, .) as a site vector (cached per window)."""
    from ._window import solve_series
    key = ("grow", tuple(int(c) for c in source), tol)
    if key in lattice.scratch:
        return lattice.scratch[key]
    si = int(lattice.site_index([source])[0])
    if si < 0:
        raise WindowTooSmall(f"source {tuple(source)} outside window")
    rhs = np.zeros(lattice.n_sites)
    rhs[si] = 1.0
    out = solve_series(lattice, rhs, lattice.apply_bwd, tol)
    lattice.scratch[key] = out
    return out


def _green_col(theta, lattice, target, tol):
    """Window-truncated g(., target) as a site vector (cached per window)."""
    from ._window import solve_series
    key = ("gcol", tuple(int(c) for c in target), tol)
    if key in lattice.scratch:
        return lattice.scratch[key]
    ti = int(lattice.site_index([target])[0])
    if ti < 0:
        raise WindowTooSmall(f"target {tuple(target)} outside window")
    rhs = np.zeros(lattice.n_sites)
    rhs[ti] = 1.0
    out = solve_series(lattice, rhs, lattice.apply_fwd, tol)
    lattice.scratch[key] = out
    return out


def _exit_flux(lattice, u, forward=True):
    """Absorbed mass per outside landing point for the solved row/column u.

    Returns (points (m, d), flux (m,)).  forward=True follows the walk
    direction (row solves), forward=False the reversed steps (column solves).
    """
    key = ("flux", id(u), forward)
    if key in lattice.scratch:
        u_ref, cached = lattice.scratch[key]
        if u_ref is u:
            return cached
    pts, flux = [], []
    for a, idx in lattice.exit_pairs():
        w = lattice.w_fwd[a] if forward else lattice.w_bwd[a]
        if w == 0.0 or len(idx) == 0:
            continue
        step = lattice.dirs[a] if forward else -lattice.dirs[a]
        pts.append(lattice.coords[idx].astype(np.int64) + step)
        flux.append(u[idx] * w)
    if not pts:
        d = lattice.dim
        out = np.zeros((0, d), dtype=np.int64), np.zeros(0)
    else:
        out = np.concatenate(pts), np.concatenate(flux)
    lattice.scratch[key] = (u, out)
    return lattice.scratch[key][1]


def free_green(theta: JumpDistribution, x, window: WindowSpec,
               tol: float = DEFAULT_TOL) -> float:
    """g(0, x) truncated to the window: a certified lower bound."""
    return free_green_with_deficit(theta, x, window, tol)[0]


def free_green_with_deficit(theta: JumpDistribution, x, window: WindowSpec,
                            tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """Window Green value plus a one-bounce estimate of the truncated mass.

    The estimate pushes the absorbed exit flux back toward x through the
    far-field law a_d ||.||^(2-d).  It is an estimate, not a bound, but at
    sane window/probe ratios it recovers most of the truncation loss.
    """
    from ._window import get_lattice
    lat = get_lattice(theta, window)
    x = np.asarray(x, dtype=np.int64)
    _check_margin(theta, lat, x)
    if not lat.contains(np.zeros(theta.dim, dtype=np.int64)):
        raise WindowTooSmall("window does not contain the origin")
    row = _green_row(theta, lat, np.zeros(theta.dim, dtype=np.int64), tol)
    xi = int(lat.site_index([x])[0])
    value = float(row[xi])
    pts, flux = _exit_flux(lat, row, forward=True)
    a_d = green_constant(theta)
    deficit = float(np.sum(flux * a_d * theta_norm(theta, pts - x) ** (2 - theta.dim)))
    return value, deficit


def occupation_green(theta: JumpDistribution, x, window: WindowSpec,
                     tol: float = DEFAULT_TOL) -> float:
    """sum_z g(0, z) g(z, x) over the window (time-weighted Green function)."""
    return occupation_green_with_deficit(theta, x, window, tol)[0]


def occupation_green_with_deficit(theta: JumpDistribution, x, window: WindowSpec,
                                  tol: float = DEFAULT_TOL) -> tuple[float, float]:
    from ._window import get_lattice
    d = theta.dim
    lat = get_lattice(theta, window)
    x = np.asarray(x, dtype=np.int64)
    _check_margin(theta, lat, x)
    row0 = _green_row(theta, lat, np.zeros(d, dtype=np.int64), tol)
    colx = _green_col(theta, lat, x, tol)
    value = float(row0 @ colx)
    if d <= 4:
        return value, float("nan")
    # Deficit: analytic tail outside the window plus one bounce off each factor.
    c_occ = occupation_constant(theta)
    rho = max(lat.radius - theta_norm(theta, x - np.asarray(lat.center)), 1.0)
    tail = green_constant(theta) ** 2 * d * ball_volume_constant(theta) \
        * rho ** (4 - d) / (d - 4)
    pts0, flux0 = _exit_flux(lat, row0, forward=True)
    ptsx, fluxx = _exit_flux(lat, colx, forward=False)
    bounce = float(np.sum(flux0 * c_occ * theta_norm(theta, pts0 - x) ** (4 - d)))
    bounce += float(np.sum(fluxx * c_occ * theta_norm(theta, ptsx) ** (4 - d)))
    return value, tail + bounce


# --- JSON round trip ------------------------------------------------------

def theta_to_json(theta: JumpDistribution) -> str:
    obj = {"dim": theta.dim, "name": theta.name,
           "atoms": [{"v": v, "p": p}
                     for v, p in zip(theta.atoms.tolist(), theta.probs.tolist())]}
    return json.dumps(obj, sort_keys=True)


def theta_from_json(text: str) -> JumpDistribution:
    try:
        obj = json.loads(text)
        atoms = [a["v"] for a in obj["atoms"]]
        probs = [a["p"] for a in obj["atoms"]]
        if any(len(v) != obj["dim"] for v in atoms):
            raise ConfigError("atom dimension mismatch")
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ConfigError(f"bad step-distribution JSON: {e}") from e
    return build_jump_distribution(atoms, probs, name=obj.get("name", ""))
