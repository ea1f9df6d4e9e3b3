"""Numba kernels for snake sampling.

The kernels fuse tree generation, edge labeling and target membership into
a single depth-first pass per sample, with early exit once the requested
targets are hit.  Draws come from a Philox4x64-10 stream keyed by
(seed, task) with the absolute sample index in the counter, so results do
not depend on the thread count.  Partial sums are written per chunk with a
fixed chunk layout; callers reduce them in a fixed order.

Target sets are passed as flat descriptor arrays so one kernel serves
explicit point sets (sorted packed keys plus a bounding-ball precheck) and
implicit subspace annuli (first m coordinates in a radius band, the rest
zero).  Up to 64 targets per call, one bit each in the hit mask.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange
from numba import float64, int64, uint64

# Philox4x64 round and Weyl constants (Random123 reference values).
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_INV53 = 1.0 / 9007199254740992.0

# Fixed chunk count: chunk boundaries depend only on n_samples, never on
# the worker count, so per-chunk partial sums reduce deterministically.
N_CHUNKS = 64

TREE_FINITE = 0
TREE_ADJOINT = 1
TREE_INFINITE = 2
TREE_KESTEN = 3


@njit(inline="always", cache=True)
def _mulhilo(a, b):
    """Full 64x64 -> 128 bit product as (hi, lo) via 32-bit split."""
    ah = a >> uint64(32)
    al = a & _MASK32
    bh = b >> uint64(32)
    bl = b & _MASK32
    t = al * bl
    u = ah * bl
    v = al * bh
    w = ah * bh
    mid = (t >> uint64(32)) + (u & _MASK32) + (v & _MASK32)
    hi = w + (u >> uint64(32)) + (v >> uint64(32)) + (mid >> uint64(32))
    return hi, a * b


@njit(inline="always", cache=True)
def _philox4(c0, c1, c2, c3, k0, k1):
    """Ten Philox4x64 rounds on counter (c0..c3) under key (k0, k1)."""
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        n0 = hi1 ^ c1 ^ k0
        n2 = hi0 ^ c3 ^ k1
        c0 = n0
        c1 = lo1
        c2 = n2
        c3 = lo0
    return c0, c1, c2, c3


@njit(cache=True)
def _philox4_jit(ctr, key, out):
    r0, r1, r2, r3 = _philox4(ctr[0], ctr[1], ctr[2], ctr[3], key[0], key[1])
    out[0] = r0
    out[1] = r1
    out[2] = r2
    out[3] = r3


def philox_block(counter, key):
    """One 10-round Philox4x64 block; exposed for known-answer tests."""
    ctr = np.asarray(counter, dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    if ctr.shape != (4,) or k.shape != (2,):
        raise ValueError("expected counter shape (4,) and key shape (2,)")
    out = np.empty(4, dtype=np.uint64)
    _philox4_jit(ctr, k, out)
    return out


# Stream state is a uint64[6] scratch: four buffered words, read position,
# block counter.  The counter block is (block, sample, 0, 0).


@njit(inline="always", cache=True)
def _stream_reset(st):
    st[4] = uint64(4)
    st[5] = uint64(0)


@njit(inline="always", cache=True)
def _next_u64(st, sample, k0, k1):
    if st[4] >= uint64(4):
        b0, b1, b2, b3 = _philox4(st[5], sample, uint64(0), uint64(0), k0, k1)
        st[0] = b0
        st[1] = b1
        st[2] = b2
        st[3] = b3
        st[5] = st[5] + uint64(1)
        st[4] = uint64(0)
    v = st[st[4]]
    st[4] = st[4] + uint64(1)
    return v


@njit(inline="always", cache=True)
def _next_unit(st, sample, k0, k1):
    return float64(_next_u64(st, sample, k0, k1) >> uint64(11)) * _INV53


@njit(inline="always", cache=True)
def _draw_idx(cdf, u):
    """Smallest k with u < cdf[k]; linear scan suits short, front-loaded cdfs."""
    n = cdf.shape[0]
    for k in range(n - 1):
        if u < cdf[k]:
            return k
    return n - 1


@njit(inline="always", cache=True)
def _pack_key(x, bases, si, bits):
    """Packed relative coordinates; valid once the bounding precheck passed."""
    key = uint64(0)
    for a in range(x.shape[0]):
        key = (key << uint64(bits)) | uint64(x[a] - bases[si, a])
    return key


@njit(inline="always", cache=True)
def _member(x, si, modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s):
    d = x.shape[0]
    if modes[si] == 0:
        s = int64(0)
        for a in range(d):
            t = x[a] - centers[si, a]
            s += t * t
        if s > rad2s[si]:
            return False
        key = _pack_key(x, bases, si, 60 // d)
        lo = koff[si]
        hi = koff[si + 1]
        while lo < hi:
            mid = (lo + hi) // 2
            if keys[mid] < key:
                lo = mid + 1
            else:
                hi = mid
        return lo < koff[si + 1] and keys[lo] == key
    m = ms[si]
    for a in range(m, d):
        if x[a] != 0:
            return False
    s = int64(0)
    for a in range(m):
        s += x[a] * x[a]
    return lo2s[si] <= s <= hi2s[si]


@njit(inline="always", cache=True)
def _target_gap(x, si, modes, centers, rad2s, ms, lo2s, hi2s):
    """Euclidean distance from x to target si's hull, floored at 1."""
    d = x.shape[0]
    if modes[si] == 0:
        s = 0.0
        for a in range(d):
            t = float64(x[a] - centers[si, a])
            s += t * t
        g = np.sqrt(s) - np.sqrt(float64(rad2s[si]))
    else:
        m = ms[si]
        perp2 = 0.0
        for a in range(m, d):
            perp2 += float64(x[a]) * float64(x[a])
        s = 0.0
        for a in range(m):
            s += float64(x[a]) * float64(x[a])
        r = np.sqrt(s)
        dr = 0.0
        lo_r = np.sqrt(float64(lo2s[si]))
        hi_r = np.sqrt(float64(hi2s[si]))
        if r < lo_r:
            dr = lo_r - r
        elif r > hi_r:
            dr = r - hi_r
        g = np.sqrt(perp2 + dr * dr)
    if g < 1.0:
        g = 1.0
    return g


@njit(inline="always", cache=True)
def _gap_min(x, modes, centers, rad2s, ms, lo2s, hi2s):
    g = _target_gap(x, 0, modes, centers, rad2s, ms, lo2s, hi2s)
    for si in range(1, modes.shape[0]):
        t = _target_gap(x, si, modes, centers, rad2s, ms, lo2s, hi2s)
        if t < g:
            g = t
    return g


@njit(cache=True)
def _run_bush(st, sample, k0, k1, root, root_cdf, mu_cdf, steps, step_cdf,
              node_cap, stack_pos, stack_rem,
              modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s,
              hitmask, stop_mask):
    """Depth-first snake from `root` with root offspring law root_cdf.

    Checks every vertex label against all targets, updating hitmask.
    Returns (hitmask, nodes_created, truncated, geom) where geom sums
    pending_subtrees * gap^(2-d) over the frontier left by a node_cap stop;
    callers turn geom into a one-sided visit-probability bias bound.
    """
    d = root.shape[0]
    nsh = modes.shape[0]
    dpow = 2.0 - float64(d)
    geom = 0.0
    created = int64(1)
    truncated = False
    for si in range(nsh):
        if (hitmask >> uint64(si)) & uint64(1) == uint64(0):
            if _member(root, si, modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s):
                hitmask |= uint64(1) << uint64(si)
    if stop_mask != uint64(0) and (hitmask & stop_mask) == stop_mask:
        return hitmask, created, truncated, geom
    k = _draw_idx(root_cdf, _next_unit(st, sample, k0, k1))
    if k == 0:
        return hitmask, created, truncated, geom
    for a in range(d):
        stack_pos[0, a] = root[a]
    stack_rem[0] = k
    sp = 1
    while sp > 0:
        if stack_rem[sp - 1] == 0:
            sp -= 1
            continue
        if created >= node_cap:
            truncated = True
            for j in range(sp):
                if stack_rem[j] > 0:
                    g = _gap_min(stack_pos[j], modes, centers, rad2s, ms, lo2s, hi2s)
                    geom += float64(stack_rem[j]) * g ** dpow
            break
        stack_rem[sp - 1] -= 1
        a = _draw_idx(step_cdf, _next_unit(st, sample, k0, k1))
        for b in range(d):
            stack_pos[sp, b] = stack_pos[sp - 1, b] + steps[a, b]
        created += 1
        for si in range(nsh):
            if (hitmask >> uint64(si)) & uint64(1) == uint64(0):
                if _member(stack_pos[sp], si, modes, keys, koff, bases,
                           centers, rad2s, ms, lo2s, hi2s):
                    hitmask |= uint64(1) << uint64(si)
        if stop_mask != uint64(0) and (hitmask & stop_mask) == stop_mask:
            return hitmask, created, truncated, geom
        k = _draw_idx(mu_cdf, _next_unit(st, sample, k0, k1))
        if k > 0:
            stack_rem[sp] = k
            sp += 1
    return hitmask, created, truncated, geom


@njit(parallel=True, cache=True)
def visit_kernel(n_samples, tree_mode, spine_len, k0, k1, x0,
                 root_cdf, mu_cdf, kesten_cdf, steps, step_cdf,
                 node_cap, bush_cap,
                 modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s,
                 stop_mask, out_hits, out_joint, out_stats, out_masks):
    """Visit indicators for finite, adjoint, infinite and Kesten snakes.

    tree_mode 0/1: one μ-GW snake from x0, root offspring from root_cdf.
    tree_mode 2: spine_len backbone steps, μ̃ bushes per spine vertex.
    tree_mode 3: Kesten spine, size-biased total with n-1 bushes.

    out_hits (chunks, nsh) marginal hit counts; out_joint (chunks, nsh, nsh)
    upper-triangle pairwise joint hits; out_stats (chunks, 4) columns:
    truncated-and-not-stopped count, frontier geom sum, nodes created,
    truncated count; out_masks (n_samples,) per-sample hit bitmasks.
    """
    d = x0.shape[0]
    nsh = modes.shape[0]
    nchunks = out_hits.shape[0]
    cap = node_cap if tree_mode <= TREE_ADJOINT else bush_cap
    for c in prange(nchunks):
        stack_pos = np.empty((cap + 1, d), np.int64)
        stack_rem = np.empty(cap + 1, np.int64)
        st = np.empty(6, np.uint64)
        pos = np.empty(d, np.int64)
        child = np.empty(d, np.int64)
        lo = (n_samples * c) // nchunks
        hi = (n_samples * (c + 1)) // nchunks
        for i in range(lo, hi):
            sample = uint64(i)
            _stream_reset(st)
            hitmask = uint64(0)
            geom = 0.0
            nodes = int64(0)
            truncated = False
            for a in range(d):
                pos[a] = x0[a]
            if tree_mode <= TREE_ADJOINT:
                hitmask, created, tr, g = _run_bush(
                    st, sample, k0, k1, pos, root_cdf, mu_cdf, steps, step_cdf,
                    node_cap, stack_pos, stack_rem, modes, keys, koff, bases,
                    centers, rad2s, ms, lo2s, hi2s, hitmask, stop_mask)
                nodes += created
                geom += g
                truncated = truncated or tr
            else:
                done = False
                for t in range(spine_len):
                    nodes += 1
                    for si in range(nsh):
                        if (hitmask >> uint64(si)) & uint64(1) == uint64(0):
                            if _member(pos, si, modes, keys, koff, bases,
                                       centers, rad2s, ms, lo2s, hi2s):
                                hitmask |= uint64(1) << uint64(si)
                    if stop_mask != uint64(0) and (hitmask & stop_mask) == stop_mask:
                        done = True
                        break
                    if tree_mode == TREE_INFINITE:
                        nb = _draw_idx(root_cdf, _next_unit(st, sample, k0, k1))
                    else:
                        nb = _draw_idx(kesten_cdf, _next_unit(st, sample, k0, k1))
                    for b in range(nb):
                        a = _draw_idx(step_cdf, _next_unit(st, sample, k0, k1))
                        for e in range(d):
                            child[e] = pos[e] + steps[a, e]
                        hitmask, created, tr, g = _run_bush(
                            st, sample, k0, k1, child, mu_cdf, mu_cdf, steps,
                            step_cdf, bush_cap, stack_pos, stack_rem, modes,
                            keys, koff, bases, centers, rad2s, ms, lo2s, hi2s,
                            hitmask, stop_mask)
                        nodes += created
                        geom += g
                        truncated = truncated or tr
                        if stop_mask != uint64(0) and (hitmask & stop_mask) == stop_mask:
                            done = True
                            break
                    if done:
                        break
                    if t < spine_len - 1:
                        a = _draw_idx(step_cdf, _next_unit(st, sample, k0, k1))
                        for e in range(d):
                            pos[e] += steps[a, e]
            out_masks[i] = hitmask
            for si in range(nsh):
                if (hitmask >> uint64(si)) & uint64(1) != uint64(0):
                    out_hits[c, si] += 1
                    for sj in range(si + 1, nsh):
                        if (hitmask >> uint64(sj)) & uint64(1) != uint64(0):
                            out_joint[c, si, sj] += 1
            if truncated:
                out_stats[c, 3] += 1.0
                if stop_mask == uint64(0) or (hitmask & stop_mask) != stop_mask:
                    out_stats[c, 0] += 1.0
                    out_stats[c, 1] += geom
            out_stats[c, 2] += float64(nodes)


@njit(cache=True)
def _count_bush(st, sample, k0, k1, root, mu_cdf, steps, step_cdf,
                node_cap, stack_pos, stack_rem,
                modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s):
    """Full enumeration variant of _run_bush: returns (visits, created, truncated)."""
    d = root.shape[0]
    count = int64(0)
    created = int64(1)
    truncated = False
    if _member(root, 0, modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s):
        count += 1
    k = _draw_idx(mu_cdf, _next_unit(st, sample, k0, k1))
    if k == 0:
        return count, created, truncated
    for a in range(d):
        stack_pos[0, a] = root[a]
    stack_rem[0] = k
    sp = 1
    while sp > 0:
        if stack_rem[sp - 1] == 0:
            sp -= 1
            continue
        if created >= node_cap:
            truncated = True
            break
        stack_rem[sp - 1] -= 1
        a = _draw_idx(step_cdf, _next_unit(st, sample, k0, k1))
        for b in range(d):
            stack_pos[sp, b] = stack_pos[sp - 1, b] + steps[a, b]
        created += 1
        if _member(stack_pos[sp], 0, modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s):
            count += 1
        k = _draw_idx(mu_cdf, _next_unit(st, sample, k0, k1))
        if k > 0:
            stack_rem[sp] = k
            sp += 1
    return count, created, truncated


@njit(parallel=True, cache=True)
def count_kernel(n_samples, tree_mode, k0, k1, x0,
                 root_cdf, mu_cdf, kesten_cdf, steps, step_cdf, bush_cap,
                 checkpoints,
                 modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s,
                 out_counts, out_stats):
    """Cumulative visit counts of one target at spine-prefix horizons.

    Runs infinite (tree_mode 2) or Kesten (tree_mode 3) snakes out to
    checkpoints[-1] backbone steps with no early exit.  out_counts
    (chunks, n_checkpoints) accumulates the visit count among spine
    vertices 0..L-1 and their bushes for each horizon L.  Bush truncation
    undercounts; out_stats columns are (truncated samples, nodes).
    """
    d = x0.shape[0]
    ncp = checkpoints.shape[0]
    spine_len = checkpoints[ncp - 1]
    nchunks = out_counts.shape[0]
    for c in prange(nchunks):
        stack_pos = np.empty((bush_cap + 1, d), np.int64)
        stack_rem = np.empty(bush_cap + 1, np.int64)
        st = np.empty(6, np.uint64)
        pos = np.empty(d, np.int64)
        child = np.empty(d, np.int64)
        lo = (n_samples * c) // nchunks
        hi = (n_samples * (c + 1)) // nchunks
        for i in range(lo, hi):
            sample = uint64(i)
            _stream_reset(st)
            total = int64(0)
            nodes = int64(0)
            truncated = False
            cp = 0
            for a in range(d):
                pos[a] = x0[a]
            for t in range(spine_len):
                nodes += 1
                if _member(pos, 0, modes, keys, koff, bases, centers, rad2s, ms, lo2s, hi2s):
                    total += 1
                if tree_mode == TREE_INFINITE:
                    nb = _draw_idx(root_cdf, _next_unit(st, sample, k0, k1))
                else:
                    nb = _draw_idx(kesten_cdf, _next_unit(st, sample, k0, k1))
                for b in range(nb):
                    a = _draw_idx(step_cdf, _next_unit(st, sample, k0, k1))
                    for e in range(d):
                        child[e] = pos[e] + steps[a, e]
                    cnt, created, tr = _count_bush(
                        st, sample, k0, k1, child, mu_cdf, steps, step_cdf,
                        bush_cap, stack_pos, stack_rem, modes, keys, koff,
                        bases, centers, rad2s, ms, lo2s, hi2s)
                    total += cnt
                    nodes += created
                    truncated = truncated or tr
                while cp < ncp and checkpoints[cp] == t + 1:
                    out_counts[c, cp] += float64(total)
                    cp += 1
                if t < spine_len - 1:
                    a = _draw_idx(step_cdf, _next_unit(st, sample, k0, k1))
                    for e in range(d):
                        pos[e] += steps[a, e]
            if truncated:
                out_stats[c, 0] += 1.0
            out_stats[c, 1] += float64(nodes)
