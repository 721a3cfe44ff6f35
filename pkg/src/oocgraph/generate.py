"""Synthetic graphs for tests and experiments."""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .edgefile import weights_to_payload, write_edge_file


def erdos_renyi(n: int, m: int, rng: np.random.Generator, self_loops: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """About ``m`` distinct directed edges drawn uniformly; sorted by (src, dst)."""
    src = rng.integers(0, n, size=m, dtype=np.uint64)
    dst = rng.integers(0, n, size=m, dtype=np.uint64)
    return _finish(src, dst, self_loops)


def skewed(n: int, m: int, rng: np.random.Generator, a: float = 0.57, b: float = 0.19, c: float = 0.19,
           self_loops: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Recursive-matrix (R-MAT style) graph with heavy-tailed degrees, IDs randomly permuted."""
    levels = max(1, int(np.ceil(np.log2(max(n, 2)))))
    src = np.zeros(m, dtype=np.uint64)
    dst = np.zeros(m, dtype=np.uint64)
    for _ in range(levels):
        r = rng.random(m)
        down = r >= a + b  # quadrants c and d
        right = ((r >= a) & (r < a + b)) | (r >= a + b + c)
        src = (src << np.uint64(1)) | down.astype(np.uint64)
        dst = (dst << np.uint64(1)) | right.astype(np.uint64)
    keep = (src < n) & (dst < n)
    perm = rng.permutation(n).astype(np.uint64)
    return _finish(perm[src[keep]], perm[dst[keep]], self_loops)


def _finish(src, dst, self_loops):
    if not self_loops:
        keep = src != dst
        src, dst = src[keep], dst[keep]
    pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
    return pairs[:, 0].copy(), pairs[:, 1].copy()


def random_weights(m: int, rng: np.random.Generator, low: float = 0.0, high: float = 10.0) -> np.ndarray:
    return rng.uniform(low, high, size=m).astype(np.float32)


def write_graph(path: str, src, dst, weights: Optional[np.ndarray] = None) -> int:
    """Write a sorted edge file; returns its payload byte count (0 or 4)."""
    if weights is None:
        write_edge_file(path, src, dst)
        return 0
    write_edge_file(path, src, dst, weights_to_payload(weights), 4)
    return 4
