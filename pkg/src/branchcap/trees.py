"""Plane tree samplers.

Critical Galton-Watson trees, their adjoint-rooted variant, and the two
one-ended constructions used for long-range visit estimates: the infinite
tree (spine with elder bushes grafted on the left) and the Kesten tree
(spine with size-biased degrees and bushes on both sides).

Trees are stored flat in depth-first preorder: vertex ids are array
offsets, ``parent[0] == -1``, and the children of a vertex are exactly the
ids pointing at it, in increasing order.  ``n_children`` records the drawn
offspring counts; for truncated trees the frontier vertices may have fewer
realized children than drawn, which is what the ``truncated`` flag marks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadProbabilities, NotCritical, ZeroVariance

__all__ = [
    "OffspringDistribution",
    "AdjointDistribution",
    "PlaneTree",
    "validate_offspring",
    "adjoint_distribution",
    "size_biased_total",
    "offspring_preset",
    "sample_gw_tree",
    "sample_adjoint_tree",
    "sample_infinite_tree",
    "sample_kesten_tree",
    "dfs_traversal",
]

_TOL_SUM = 1e-12
_GEOMETRIC_CUTOFF = 50


@dataclass(frozen=True)
class OffspringDistribution:
    """Validated critical offspring law with cached moments and cdf."""

    pmf: np.ndarray
    cdf: np.ndarray
    mean: float
    variance: float
    third_moment: float
    name: str = ""

    def __repr__(self):
        return "OffspringDistribution(name=%r, support=%d, var=%.6g)" % (
            self.name, len(self.pmf), self.variance)


@dataclass(frozen=True)
class AdjointDistribution:
    """Tail-sum law: pmf[i] = sum of mu(j) over j > i; mean is var(mu)/2."""

    pmf: np.ndarray
    cdf: np.ndarray
    mean: float


def validate_offspring(pmf, name: str = "") -> OffspringDistribution:
    """Validate a child-count pmf: probabilities, mean one, positive variance."""
    arr = np.asarray(pmf, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise BadProbabilities("offspring pmf must be a nonempty 1-d list")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise BadProbabilities("offspring pmf entries must be finite and >= 0")
    total = float(arr.sum())
    if abs(total - 1.0) > _TOL_SUM:
        raise BadProbabilities("offspring pmf sums to %.17g, not 1" % total)
    k = np.arange(arr.size, dtype=np.float64)
    mean = float(k @ arr)
    if abs(mean - 1.0) > _TOL_SUM:
        raise NotCritical("offspring mean is %.17g, need 1" % mean)
    variance = float((k * k) @ arr) - mean * mean
    if variance <= 0.0:
        # mean one with zero variance forces mu(1) = 1, the excluded case
        raise ZeroVariance("offspring law is concentrated at one child")
    third = float((k * k * k) @ arr)
    return OffspringDistribution(
        pmf=arr,
        cdf=np.cumsum(arr),
        mean=mean,
        variance=variance,
        third_moment=third,
        name=name,
    )


def adjoint_distribution(mu: OffspringDistribution) -> AdjointDistribution:
    """Tail-sum companion law; its mean equals variance/2 by summation by parts."""
    tails = np.cumsum(mu.pmf[::-1])[::-1]
    pmf = tails[1:].copy()
    while pmf.size > 1 and pmf[-1] == 0.0:
        pmf = pmf[:-1]
    total = float(pmf.sum())
    pmf = pmf / total
    mean = float(np.arange(pmf.size) @ pmf) * total
    # un-normalized mean equals variance/2; keep the normalized pmf for draws
    return AdjointDistribution(pmf=pmf * total, cdf=np.cumsum(pmf), mean=mean)


def size_biased_total(mu: OffspringDistribution) -> np.ndarray:
    """pmf of the size-biased total degree: entry j is P(total = j + 1)."""
    n = np.arange(1, mu.pmf.size, dtype=np.float64)
    pmf = n * mu.pmf[1:]
    return pmf / pmf.sum()


def offspring_preset(name: str) -> OffspringDistribution:
    """Bundled critical laws: "binary" (variance 1) and "geometric" (variance 2).

    The geometric law 2^-(i+1) is cut at i = 50 and renormalized; the
    discarded mass is about 4e-16, so criticality still holds at 1e-12.
    """
    if name == "binary":
        return validate_offspring([0.5, 0.0, 0.5], name="binary")
    if name == "geometric":
        pmf = 0.5 ** (np.arange(_GEOMETRIC_CUTOFF + 1, dtype=np.float64) + 1.0)
        pmf /= pmf.sum()
        return validate_offspring(pmf, name="geometric")
    raise BadProbabilities("unknown offspring preset %r" % name)


@dataclass(eq=False)
class PlaneTree:
    """Flat preorder tree; see module docstring for storage conventions."""

    parent: np.ndarray
    n_children: np.ndarray
    spine: np.ndarray | None = None
    truncated: bool = False
    _kids: list | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.parent.size

    @property
    def root(self) -> int:
        return 0

    def children_of(self, v: int) -> np.ndarray:
        """Realized children of v in birth order (ascending id)."""
        if self._kids is None:
            kids = [[] for _ in range(self.n)]
            for w in range(1, self.n):
                kids[int(self.parent[w])].append(w)
            self._kids = [np.array(c, dtype=np.int64) for c in kids]
        return self._kids[v]


class _CountStream:
    """Buffered draws of pmf indices, vectorized through searchsorted."""

    def __init__(self, rng, cdf, block=1024):
        self._rng = rng
        self._cdf = cdf
        self._block = block
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def take(self) -> int:
        if self._pos >= self._buf.size:
            u = self._rng.random(self._block)
            self._buf = np.searchsorted(self._cdf, u, side="right").astype(np.int64)
            self._pos = 0
        k = self._buf[self._pos]
        self._pos += 1
        return int(k)


def _append_subtree(parent_id, root_k, counts, node_cap, parent, n_children):
    """Grow one subtree in preorder below parent_id; returns truncated flag.

    The subtree root's offspring count root_k is supplied by the caller;
    interior counts come from the buffered stream.  node_cap bounds the
    subtree's vertex count; a blocked expansion flags truncation and keeps
    the already-drawn counts.
    """
    root = len(parent)
    parent.append(parent_id)
    n_children.append(root_k)
    if root_k == 0:
        return False
    created = 1
    stack = [[root, root_k]]
    while stack:
        top = stack[-1]
        if top[1] == 0:
            stack.pop()
            continue
        if created >= node_cap:
            return True
        top[1] -= 1
        v = len(parent)
        parent.append(top[0])
        created += 1
        k = counts.take()
        n_children.append(k)
        if k > 0:
            stack.append([v, k])
    return False


def _finite_tree(mu, rng, node_cap, root_cdf) -> PlaneTree:
    counts = _CountStream(rng, mu.cdf, block=min(max(node_cap, 16), 1024))
    parent: list = []
    n_children: list = []
    root_k = int(np.searchsorted(root_cdf, rng.random(), side="right"))
    truncated = _append_subtree(-1, root_k, counts, node_cap, parent, n_children)
    return PlaneTree(
        parent=np.array(parent, dtype=np.int64),
        n_children=np.array(n_children, dtype=np.int64),
        spine=None,
        truncated=truncated,
    )


def sample_gw_tree(mu: OffspringDistribution, rng, node_cap: int) -> PlaneTree:
    """One critical GW tree in preorder, truncated at node_cap vertices."""
    if node_cap < 1:
        raise ValueError("node_cap must be >= 1")
    return _finite_tree(mu, rng, node_cap, mu.cdf)


def sample_adjoint_tree(mu: OffspringDistribution, rng, node_cap: int) -> PlaneTree:
    """GW tree whose root offspring count follows the adjoint (tail-sum) law."""
    if node_cap < 1:
        raise ValueError("node_cap must be >= 1")
    return _finite_tree(mu, rng, node_cap, adjoint_distribution(mu).cdf)


def sample_infinite_tree(mu: OffspringDistribution, spine_len: int, rng,
                         bush_cap: int) -> PlaneTree:
    """Spine of spine_len vertices, each with adjoint-many elder GW bushes.

    The spine child is always the youngest child of its parent; every spine
    vertex, the terminal one included, carries its elder bushes.  bush_cap
    caps each bush separately.
    """
    if spine_len < 1:
        raise ValueError("spine_len must be >= 1")
    adj = adjoint_distribution(mu)
    counts = _CountStream(rng, mu.cdf)
    parent: list = []
    n_children: list = []
    spine = np.empty(spine_len, dtype=np.int64)
    truncated = False
    prev = -1
    for t in range(spine_len):
        v = len(parent)
        spine[t] = v
        parent.append(prev)
        nb = int(np.searchsorted(adj.cdf, rng.random(), side="right"))
        last = t == spine_len - 1
        n_children.append(nb if last else nb + 1)
        for _ in range(nb):
            truncated |= _append_subtree(v, counts.take(), counts, bush_cap,
                                         parent, n_children)
        prev = v
    return PlaneTree(
        parent=np.array(parent, dtype=np.int64),
        n_children=np.array(n_children, dtype=np.int64),
        spine=spine,
        truncated=truncated,
    )


def sample_kesten_tree(mu: OffspringDistribution, spine_len: int, rng,
                       bush_cap: int) -> PlaneTree:
    """Spine with size-biased degrees and a uniform spine slot.

    Each spine vertex draws its total degree n with probability n*mu(n),
    places the spine child uniformly among the n slots, and fills the other
    slots with independent GW bushes.  Elder bushes are emitted before the
    spine child; younger bushes are deferred so the storage stays preorder.
    """
    if spine_len < 1:
        raise ValueError("spine_len must be >= 1")
    total_cdf = np.cumsum(size_biased_total(mu))
    counts = _CountStream(rng, mu.cdf)
    parent: list = []
    n_children: list = []
    spine = np.empty(spine_len, dtype=np.int64)
    truncated = False
    deferred: list = []
    prev = -1
    for t in range(spine_len):
        v = len(parent)
        spine[t] = v
        parent.append(prev)
        n = int(np.searchsorted(total_cdf, rng.random(), side="right")) + 1
        last = t == spine_len - 1
        slot = int(rng.integers(n))
        elder, younger = slot, n - 1 - slot
        n_children.append(n - 1 if last else n)
        for _ in range(elder):
            truncated |= _append_subtree(v, counts.take(), counts, bush_cap,
                                         parent, n_children)
        deferred.append((v, younger))
        prev = v
    while deferred:
        v, younger = deferred.pop()
        for _ in range(younger):
            truncated |= _append_subtree(v, counts.take(), counts, bush_cap,
                                         parent, n_children)
    return PlaneTree(
        parent=np.array(parent, dtype=np.int64),
        n_children=np.array(n_children, dtype=np.int64),
        spine=spine,
        truncated=truncated,
    )


def dfs_traversal(tree: PlaneTree) -> np.ndarray:
    """Depth-first preorder listing, honoring children order."""
    order = np.empty(tree.n, dtype=np.int64)
    stack = [tree.root]
    pos = 0
    while stack:
        v = stack.pop()
        order[pos] = v
        pos += 1
        kids = tree.children_of(v)
        for w in kids[::-1]:
            stack.append(int(w))
    return order
