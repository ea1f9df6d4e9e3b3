"""Masked-lattice windows and linear-solve primitives.

A window is the set of integer points z with ||z - center|| <= radius in the
step-adapted norm.  Sites are stored as a flat list (index -> coordinates)
together with a dense lookup cube mapping cube offsets back to site indices,
and a neighbor table over the symmetric closure of the step directions.  All
window operators (step expectation, survival-weighted push, restricted
variants) reduce to weighted gathers over that table, so one structure serves
the free Green function, the killed Green function and the nonlinear
visit-probability solver.

Boundary policy is absorbing: gathers treat out-of-window neighbors as zero.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict

import numpy as np
from numba import njit, prange
from scipy.sparse.linalg import LinearOperator, bicgstab

from .errors import NoConvergence


@njit(parallel=True, cache=True)
def _gather(out, u, nbr, w):
    n, nd = nbr.shape
    for i in prange(n):
        s = 0.0
        for a in range(nd):
            j = nbr[i, a]
            if j >= 0:
                s += w[a] * u[j]
        out[i] = s


@njit(parallel=True, cache=True)
def _gather_masked(out, u, nbr, w, keep):
    # keep[i] == 0 rows produce 0 (used for target-restricted path sums)
    n, nd = nbr.shape
    for i in prange(n):
        if keep[i] == 0:
            out[i] = 0.0
        else:
            s = 0.0
            for a in range(nd):
                j = nbr[i, a]
                if j >= 0:
                    s += w[a] * u[j]
            out[i] = s


def _theta_digest(theta) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(theta.atoms).tobytes())
    h.update(np.ascontiguousarray(theta.probs).tobytes())
    return h.hexdigest()[:16]


class SiteLattice:
    """Site enumeration and neighbor structure for one (theta, window) pair."""

    def __init__(self, theta, center, radius: float):
        self.theta = theta
        self.center = np.asarray(center, dtype=np.int64)
        self.radius = float(radius)
        d = theta.dim
        self.dim = d

        # Symmetric closure of the step directions; two weight vectors give
        # the forward (expectation) and reverse (mass push) operators off one
        # neighbor table.
        dirs = {tuple(v) for v in theta.atoms}
        dirs |= {tuple(-v for v in t) for t in dirs}
        self.dirs = np.array(sorted(dirs), dtype=np.int64)
        prob_of = {tuple(v): p for v, p in zip(theta.atoms.tolist(), theta.probs)}
        self.w_fwd = np.array([prob_of.get(tuple(v), 0.0) for v in self.dirs.tolist()])
        self.w_bwd = np.array([prob_of.get(tuple(-c for c in v), 0.0)
                               for v in self.dirs.tolist()])

        # Bounding box half-widths: the norm ball is the ellipsoid
        # (z-c)' Qinv (z-c) <= d r^2, whose axis-i extent is r sqrt(d Q_ii).
        hw = np.ceil(self.radius * np.sqrt(d * np.diag(theta.cov)) + 1e-9).astype(np.int64)
        self.half_widths = hw
        self.cube_shape = tuple(int(2 * h + 1) for h in hw)

        qinv = theta.cov_inv
        rr = d * self.radius ** 2 * (1.0 + 1e-12) + 1e-9
        coords_parts = []
        # Slab over the first axis to keep the candidate grid small.
        rest_shape = self.cube_shape[1:]
        rest = np.indices(rest_shape).reshape(d - 1, -1).T.astype(np.int64) if d > 1 else \
            np.zeros((1, 0), dtype=np.int64)
        rest -= hw[1:]
        for a0 in range(-int(hw[0]), int(hw[0]) + 1):
            if d > 1:
                cand = np.empty((rest.shape[0], d), dtype=np.int64)
                cand[:, 0] = a0
                cand[:, 1:] = rest
            else:
                cand = np.array([[a0]], dtype=np.int64)
            q = np.einsum('ij,jk,ik->i', cand, qinv, cand)
            coords_parts.append(cand[q <= rr])
        coords = np.concatenate(coords_parts)
        self.coords = (coords + self.center).astype(np.int32)
        self.n_sites = len(self.coords)

        flat = np.ravel_multi_index(
            tuple((coords[:, i] + hw[i]) for i in range(d)), self.cube_shape)
        cube = np.full(int(np.prod(self.cube_shape)), -1, dtype=np.int32)
        cube[flat] = np.arange(self.n_sites, dtype=np.int32)
        self.idx_cube = cube

        q_abs = np.einsum('ij,jk,ik->i', self.coords.astype(np.float64), qinv,
                          self.coords.astype(np.float64)) / d
        self.norms = np.sqrt(q_abs)
        self.norms[np.all(self.coords == 0, axis=1)] = 0.5

        self._nbr = None
        self._exit_pairs = None
        self.scratch: dict = {}   # per-window solve cache (rows, fluxes, fields)

    @property
    def nbr(self) -> np.ndarray:
        if self._nbr is None:
            d = self.dim
            hw = self.half_widths
            n_dirs = len(self.dirs)
            tbl = np.full((self.n_sites, n_dirs), -1, dtype=np.int32)
            rel = self.coords.astype(np.int64) - self.center
            for a in range(n_dirs):
                t = rel + self.dirs[a]
                ok = np.all(np.abs(t) <= hw, axis=1)
                flat = np.ravel_multi_index(
                    tuple(t[ok, i] + hw[i] for i in range(d)), self.cube_shape)
                tbl[ok, a] = self.idx_cube[flat]
            self._nbr = tbl
        return self._nbr

    def site_index(self, points) -> np.ndarray:
        """Indices of the given points, -1 for points outside the window."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        rel = pts - self.center
        hw = self.half_widths
        ok = np.all(np.abs(rel) <= hw, axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        if ok.any():
            flat = np.ravel_multi_index(
                tuple(rel[ok, i] + hw[i] for i in range(self.dim)), self.cube_shape)
            out[ok] = self.idx_cube[flat]
        return out

    def contains(self, point) -> bool:
        return int(self.site_index([point])[0]) >= 0

    # --- operator applications -------------------------------------------

    def apply_fwd(self, u, out=None):
        """(Theta u)(z) = sum_v theta(v) u(z+v), zero outside the window."""
        if out is None:
            out = np.empty_like(u)
        _gather(out, u, self.nbr, self.w_fwd)
        return out

    def apply_bwd(self, u, out=None):
        """(Theta* u)(z) = sum_v theta(v) u(z-v), zero outside the window."""
        if out is None:
            out = np.empty_like(u)
        _gather(out, u, self.nbr, self.w_bwd)
        return out

    def apply_fwd_restricted(self, u, keep, out=None):
        if out is None:
            out = np.empty_like(u)
        _gather_masked(out, u, self.nbr, self.w_fwd, keep)
        return out

    def apply_bwd_restricted(self, u, keep, out=None):
        if out is None:
            out = np.empty_like(u)
        _gather_masked(out, u, self.nbr, self.w_bwd, keep)
        return out

    def exit_pairs(self):
        """(site index, direction index) pairs whose step leaves the window.

        Used by the one-bounce boundary corrections: mass crossing such a pair
        lands at coords[site] + dirs[dir] outside the window.
        """
        if self._exit_pairs is None:
            nbr = self.nbr
            pairs = []
            for a in range(len(self.dirs)):
                idx = np.nonzero(nbr[:, a] == -1)[0]
                if len(idx):
                    pairs.append((a, idx.astype(np.int64)))
            self._exit_pairs = pairs
        return self._exit_pairs


def solve_series(lattice: SiteLattice, rhs: np.ndarray, apply_step, tol: float,
                 maxiter: int = 40000) -> np.ndarray:
    """Solve u = rhs + K u for a substochastic step operator K.

    Krylov (BiCGStab) with a Richardson fallback; the iteration targets a
    residual below tol in the sup norm.  Raises NoConvergence if neither
    converges within budget.
    """
    n = rhs.size

    def matvec(u):
        return u - apply_step(u)

    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    scale = max(np.max(np.abs(rhs)), 1e-300)
    x, info = bicgstab(op, rhs, rtol=1e-14, atol=0.02 * tol * scale,
                       maxiter=min(maxiter, 2000))
    if info == 0 and np.all(np.isfinite(x)):
        res = rhs + apply_step(x) - x
        if np.max(np.abs(res)) <= tol * scale:
            return x
        u = x
    else:
        u = rhs.copy()
    # Richardson polish: u <- rhs + K u, contraction given absorption/killing.
    for _ in range(maxiter):
        nxt = rhs + apply_step(u)
        delta = np.max(np.abs(nxt - u))
        u = nxt
        if delta <= tol * scale:
            return u
    raise NoConvergence(f"series solve stalled (last increment {delta:.3e})")


_CACHE: OrderedDict = OrderedDict()
_CACHE_SIZE = 4


def get_lattice(theta, window) -> SiteLattice:
    """Build (or fetch from a small LRU cache) the site lattice of a window."""
    key = (_theta_digest(theta), tuple(int(c) for c in window.center),
           float(window.radius))
    if key in _CACHE:
        _CACHE.move_to_end(key)
        return _CACHE[key]
    lat = SiteLattice(theta, window.center, window.radius)
    _CACHE[key] = lat
    while len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return lat


def clear_cache():
    _CACHE.clear()
