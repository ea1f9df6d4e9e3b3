"""Counter-based random streams.

Every Monte Carlo draw in this package comes from a Philox4x64-10 stream
keyed by (seed, task label), with the absolute sample index folded into the
counter block.  Estimates are therefore bit-reproducible for a fixed seed
and independent of how samples are scheduled over worker threads.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.random import Generator, Philox

__all__ = ["task_key", "philox_key", "stream"]

_PY_LANE = np.uint64(1) << np.uint64(63)


def task_key(label: str) -> int:
    """Stable 64-bit key for a task label (sha256 prefix)."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def philox_key(seed: int, label: str) -> tuple[int, int]:
    """Philox key words (k0, k1) for a (seed, task) pair."""
    return int(seed) & 0xFFFFFFFFFFFFFFFF, task_key(label)


def stream(seed: int, label: str, index: int = 0) -> Generator:
    """Python-level generator on a lane disjoint from the numba kernels.

    Kernel draws keep counter word 3 at zero; python streams set its top
    bit, so reference samplers can never replay a kernel block.
    """
    k0, k1 = philox_key(seed, label)
    counter = np.array([0, 0, index, _PY_LANE], dtype=np.uint64)
    key = np.array([k0, k1], dtype=np.uint64)
    return Generator(Philox(counter=counter, key=key))
