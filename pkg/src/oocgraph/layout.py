"""Vertex-ID space arithmetic: partitions, batches and degree bookkeeping.

Vertex IDs are dense integers ``0..num_vertices-1``.  A partition is a
contiguous ID range owned by one node; a batch is a contiguous sub-range of a
partition and the unit of vertex-data I/O.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

ID_DTYPE = np.dtype("<u8")


class LayoutError(ValueError):
    """Invalid layout, configuration, or out-of-range vertex ID."""


@dataclass(frozen=True)
class GraphMeta:
    num_vertices: int
    num_edges: int
    edge_payload_bytes: int = 0
    num_partitions: int = 1
    alpha: Optional[int] = None
    csr_inflate_ratio: float = 32.0
    gamma: int = 1024
    filter_skip_ratio: float = 2.0

    def __post_init__(self):
        if self.alpha is None:
            object.__setattr__(self, "alpha", 2 * self.num_partitions - 1)
        if self.num_vertices < 1:
            raise LayoutError("num_vertices must be >= 1")
        if self.num_partitions < 1:
            raise LayoutError("num_partitions must be >= 1")
        if self.alpha < 0:
            raise LayoutError("alpha must be >= 0")
        if self.csr_inflate_ratio < 1:
            raise LayoutError("csr_inflate_ratio must be >= 1")
        if self.gamma < 1:
            raise LayoutError("gamma must be >= 1")
        if self.filter_skip_ratio <= 0:
            raise LayoutError("filter_skip_ratio must be > 0")
        if self.edge_payload_bytes < 0:
            raise LayoutError("edge_payload_bytes must be >= 0")

    def to_dict(self) -> dict:
        return {
            "num_vertices": self.num_vertices,
            "num_edges": self.num_edges,
            "edge_payload_bytes": self.edge_payload_bytes,
            "num_partitions": self.num_partitions,
            "alpha": self.alpha,
            "csr_inflate_ratio": self.csr_inflate_ratio,
            "gamma": self.gamma,
            "filter_skip_ratio": self.filter_skip_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphMeta":
        return cls(**d)


@dataclass(frozen=True)
class PartitionLayout:
    """Partition ``i`` owns IDs ``[boundaries[i], boundaries[i+1])``."""

    boundaries: Tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2 or b[0] != 0:
            raise LayoutError(f"bad partition boundaries {b}")
        if any(hi < lo for lo, hi in zip(b, b[1:])):
            raise LayoutError(f"partition boundaries must be non-decreasing: {b}")

    @property
    def num_partitions(self) -> int:
        return len(self.boundaries) - 1

    @property
    def num_vertices(self) -> int:
        return self.boundaries[-1]

    def range_of(self, p: int) -> Tuple[int, int]:
        return self.boundaries[p], self.boundaries[p + 1]

    def size_of(self, p: int) -> int:
        lo, hi = self.range_of(p)
        return hi - lo

    def partition_of(self, v):
        """Partition index of scalar or array ``v``."""
        b = np.asarray(self.boundaries[1:-1], dtype=np.int64)
        if np.isscalar(v):
            return int(np.searchsorted(b, v, side="right"))
        return np.searchsorted(b, np.asarray(v, dtype=np.int64), side="right")


@dataclass(frozen=True)
class BatchLayout:
    """Fixed-size batching of every partition; the last batch may be short."""

    batch_size: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise LayoutError("batch_size must be >= 1")

    def num_batches(self, lo: int, hi: int) -> int:
        return max(0, -(-(hi - lo) // self.batch_size))

    def batches_of(self, layout: PartitionLayout, p: int) -> List[Tuple[int, int]]:
        lo, hi = layout.range_of(p)
        B = self.batch_size
        return [(s, min(s + B, hi)) for s in range(lo, hi, B)]

    def batch_of(self, layout: PartitionLayout, p: int, v):
        """Batch index (within partition ``p``) of scalar or array ``v``."""
        lo = layout.boundaries[p]
        if np.isscalar(v):
            return (int(v) - lo) // self.batch_size
        return (np.asarray(v, dtype=np.int64) - lo) // self.batch_size


def locate(v: int, layout: PartitionLayout, batching: BatchLayout) -> Tuple[int, int, int]:
    """Return ``(partition, batch within partition, offset within batch)``."""
    if not 0 <= v < layout.num_vertices:
        raise LayoutError(f"vertex {v} outside [0, {layout.num_vertices})")
    p = layout.partition_of(v)
    rel = v - layout.boundaries[p]
    return p, rel // batching.batch_size, rel % batching.batch_size


def unlocate(p: int, b: int, off: int, layout: PartitionLayout, batching: BatchLayout) -> int:
    return layout.boundaries[p] + b * batching.batch_size + off


@dataclass
class DegreeTable:
    in_degree: np.ndarray
    out_degree: np.ndarray
    _prefix: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def empty(cls, num_vertices: int) -> "DegreeTable":
        z = np.zeros(num_vertices, dtype=np.int64)
        return cls(z, z.copy())

    @classmethod
    def from_edges(cls, src, dst, num_vertices: int) -> "DegreeTable":
        t = cls.empty(num_vertices)
        t.add_edges(src, dst)
        return t

    def add_edges(self, src, dst):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        n = len(self.out_degree)
        self.out_degree += np.bincount(src, minlength=n)[:n]
        self.in_degree += np.bincount(dst, minlength=n)[:n]

    @property
    def num_vertices(self) -> int:
        return len(self.out_degree)

    @property
    def num_edges(self) -> int:
        return int(self.out_degree.sum())

    def incoming(self, lo: int, hi: int) -> int:
        """|E_i^i| for the range [lo, hi)."""
        return int(self.in_degree[lo:hi].sum())

    def outgoing(self, lo: int, hi: int) -> int:
        """|E_i^o| for the range [lo, hi)."""
        return int(self.out_degree[lo:hi].sum())

    def partition_totals(self, layout: PartitionLayout) -> Tuple[List[int], List[int]]:
        inc = [self.incoming(*layout.range_of(p)) for p in range(layout.num_partitions)]
        out = [self.outgoing(*layout.range_of(p)) for p in range(layout.num_partitions)]
        return inc, out


def vertex_weight(v, alpha: int, degrees: DegreeTable):
    """Balance weight of a vertex: alpha + in-degree + out-degree."""
    return alpha + degrees.in_degree[v] + degrees.out_degree[v]


def vertex_weights(alpha: int, degrees: DegreeTable) -> np.ndarray:
    return alpha + degrees.in_degree + degrees.out_degree
