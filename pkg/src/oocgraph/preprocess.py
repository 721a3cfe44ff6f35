"""Turn a sorted binary edge list into the on-disk partitioned graph.

Output directory layout::

    manifest.json
    degrees.out, degrees.in          u64 per vertex
    node{j}/chunks/p{p}_b{b}.dcsr    edge chunk, always (when non-empty)
    node{j}/chunks/p{p}_b{b}.csr     edge chunk, when the CSR rule accepts it
    node{j}/dispatch/p{p}.dcsr|.csr  dispatching graph (src -> local batch)
    node{j}/dispatch/pull_p{p}_b{b}.ids
    node{i}/filter/to{j}.ids         filter list L_ij (u64, ascending)
    reversed/...                     same structure for the reversed graph
"""
from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import edgefile
from .encoding import ChunkFileWriter, should_build_csr
from .layout import ID_DTYPE, BatchLayout, DegreeTable, GraphMeta, LayoutError, PartitionLayout

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = 1


class PreprocessError(ValueError):
    def __init__(self, msg, ordinal=None):
        super().__init__(msg)
        self.ordinal = ordinal


# -- partitioning ------------------------------------------------------------

def _greedy(prefix, P, cap):
    """Greedy contiguous cover with parts of weight <= cap; None if it needs more than P parts."""
    n = len(prefix) - 1
    bounds = [0]
    pos = 0
    for _ in range(P):
        nxt = int(np.searchsorted(prefix, prefix[pos] + cap, side="right")) - 1
        if nxt <= pos:
            return None
        pos = min(nxt, n)
        bounds.append(pos)
        if pos == n:
            return bounds
    return None


def partition_prefix(prefix, P: int) -> List[int]:
    """Optimal contiguous P-way split of weights given by their prefix sums.

    Minimizes the maximum part weight (binary search on the cap with a greedy
    feasibility check), then splits heavy parts until there are exactly P
    non-empty parts.
    """
    n = len(prefix) - 1
    if P < 1:
        raise LayoutError("P must be >= 1")
    if P > n:
        raise LayoutError(f"cannot split {n} vertices into {P} non-empty partitions")
    prefix = np.asarray(prefix, dtype=np.int64) if not isinstance(prefix, np.memmap) else prefix
    total = int(prefix[n])
    w = np.diff(np.asarray(prefix[: n + 1], dtype=np.int64)) if n <= (1 << 22) else None
    lo = int(w.max()) if w is not None else 0
    if w is None:
        for a in range(0, n, 1 << 20):
            lo = max(lo, int(np.diff(np.asarray(prefix[a:min(a + (1 << 20), n) + 1])).max()))
    lo = max(lo, -(-total // P))
    hi = max(lo, total)
    while lo < hi:
        mid = (lo + hi) // 2
        if _greedy(prefix, P, mid) is not None:
            hi = mid
        else:
            lo = mid + 1
    bounds = _greedy(prefix, P, lo)
    while len(bounds) - 1 < P:
        best = None
        for k in range(len(bounds) - 1):
            a, b = bounds[k], bounds[k + 1]
            if b - a >= 2:
                wt = int(prefix[b]) - int(prefix[a])
                if best is None or wt > best[0]:
                    best = (wt, k)
        _, k = best
        a, b = bounds[k], bounds[k + 1]
        half = int(prefix[a]) + (int(prefix[b]) - int(prefix[a])) / 2
        cut = int(np.searchsorted(prefix[a:b + 1], half, side="left")) + a
        cut = min(max(cut, a + 1), b - 1)
        bounds.insert(k + 1, cut)
    return bounds


def partition_vertices(degrees: DegreeTable, P: int, alpha: Optional[int] = None) -> PartitionLayout:
    if alpha is None:
        alpha = 2 * P - 1
    w = alpha + degrees.in_degree.astype(np.int64) + degrees.out_degree.astype(np.int64)
    prefix = np.zeros(len(w) + 1, dtype=np.int64)
    np.cumsum(w, out=prefix[1:])
    return PartitionLayout(tuple(partition_prefix(prefix, P)))


def partition_weights(weights, boundaries) -> List[int]:
    w = np.asarray(weights, dtype=np.int64)
    return [int(w[a:b].sum()) for a, b in zip(boundaries, boundaries[1:])]


def choose_batch_size(mode: str, memory_budget_bytes: int, threads: int, vertex_record_bytes: int,
                      partition_sizes) -> int:
    """Largest batch size allowed by memory (``fully``) or load balance (``semi``),
    floored to a multiple of 64."""
    if threads < 1:
        raise LayoutError("threads must be >= 1")
    if mode == "fully":
        if memory_budget_bytes <= 0:
            raise LayoutError("memory budget must be positive")
        # B * record * T < budget / 2
        b = (memory_budget_bytes - 1) // (2 * vertex_record_bytes * threads)
        if b < 64:
            raise LayoutError(f"memory budget {memory_budget_bytes} too small for a 64-vertex batch")
    elif mode == "semi":
        b = (2 * min(partition_sizes)) // (3 * threads)
    else:
        raise LayoutError(f"unknown batching mode {mode!r}")
    return max(64, b // 64 * 64)


# -- manifest ----------------------------------------------------------------

@dataclass
class ChunkRecord:
    p: int
    node: int
    batch: int
    edges: int
    has_csr: bool = False
    dcsr: Optional[str] = None
    csr: Optional[str] = None


@dataclass
class DispatchRecord:
    p: int
    node: int
    pairs: int
    sources: int
    has_csr: bool
    dcsr: Optional[str]
    csr: Optional[str]
    pull: List[dict] = field(default_factory=list)  # [{"batch", "path", "length"}]


@dataclass
class Manifest:
    meta: GraphMeta
    layout: PartitionLayout
    batching: BatchLayout
    chunks: List[ChunkRecord]
    filters: List[dict]  # {"from", "to", "path", "length"}
    dispatch: List[DispatchRecord]
    partition_in_edges: List[int]
    partition_out_edges: List[int]
    degrees_out: str = "degrees.out"
    degrees_in: str = "degrees.in"
    reversed: Optional[str] = None
    root: str = ""

    def path(self, rel: Optional[str]) -> Optional[str]:
        return None if rel is None else os.path.join(self.root, rel)

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "meta": self.meta.to_dict(),
            "boundaries": list(self.layout.boundaries),
            "batch_size": self.batching.batch_size,
            "partition_in_edges": self.partition_in_edges,
            "partition_out_edges": self.partition_out_edges,
            "degrees_out": self.degrees_out,
            "degrees_in": self.degrees_in,
            "chunks": [vars(c) for c in self.chunks],
            "filters": self.filters,
            "dispatch": [vars(d) for d in self.dispatch],
            "reversed": self.reversed,
        }

    @classmethod
    def from_json(cls, d: dict, root: str = "") -> "Manifest":
        if d.get("format") != MANIFEST_FORMAT:
            raise PreprocessError(f"unsupported manifest format {d.get('format')}")
        return cls(
            meta=GraphMeta.from_dict(d["meta"]),
            layout=PartitionLayout(tuple(d["boundaries"])),
            batching=BatchLayout(d["batch_size"]),
            chunks=[ChunkRecord(**c) for c in d["chunks"]],
            filters=d["filters"],
            dispatch=[DispatchRecord(**x) for x in d["dispatch"]],
            partition_in_edges=d["partition_in_edges"],
            partition_out_edges=d["partition_out_edges"],
            degrees_out=d["degrees_out"],
            degrees_in=d["degrees_in"],
            reversed=d.get("reversed"),
            root=root,
        )

    def save(self, directory=None):
        directory = directory or self.root
        tmp = os.path.join(directory, MANIFEST_NAME + ".tmp")
        with open(tmp, "w") as f:
            json.dump(self.to_json(), f, indent=1)
        os.replace(tmp, os.path.join(directory, MANIFEST_NAME))

    @classmethod
    def load(cls, directory) -> "Manifest":
        path = os.path.join(directory, MANIFEST_NAME)
        if not os.path.exists(path):
            raise FileNotFoundError(f"no manifest in {directory}")
        with open(path) as f:
            return cls.from_json(json.load(f), root=directory)

    def chunk(self, p: int, node: int, batch: int) -> ChunkRecord:
        return self._chunk_index()[(p, node, batch)]

    def _chunk_index(self):
        idx = getattr(self, "_cidx", None)
        if idx is None:
            idx = {(c.p, c.node, c.batch): c for c in self.chunks}
            self._cidx = idx
        return idx

    def dispatch_record(self, p: int, node: int) -> DispatchRecord:
        for d in self.dispatch:
            if d.p == p and d.node == node:
                return d
        raise KeyError((p, node))

    def filter_record(self, i: int, j: int) -> dict:
        for f in self.filters:
            if f["from"] == i and f["to"] == j:
                return f
        raise KeyError((i, j))

    def load_reversed(self) -> "Manifest":
        if self.reversed is None:
            raise PreprocessError("graph was preprocessed without --reversed")
        return Manifest.load(os.path.join(self.root, os.path.dirname(self.reversed)))


def read_ids(path) -> np.ndarray:
    if path is None or not os.path.exists(path) or os.path.getsize(path) == 0:
        return np.zeros(0, dtype=ID_DTYPE)
    return np.memmap(path, dtype=ID_DTYPE, mode="r")


# -- streaming passes --------------------------------------------------------

def _window_size(memory_budget: int, payload_bytes: int) -> int:
    return int(max(1024, memory_budget // (8 * (16 + payload_bytes))))


def scan_degrees(path, num_vertices: int, payload_bytes: int, out_dir: str, memory_budget: int,
                 check_sorted: bool = True) -> Tuple[np.memmap, np.memmap, int]:
    """Validate the input and accumulate degrees into u64 files; returns (out, in, |E|)."""
    outd = np.memmap(os.path.join(out_dir, "degrees.out"), dtype=ID_DTYPE, mode="w+", shape=(num_vertices,))
    ind = np.memmap(os.path.join(out_dir, "degrees.in"), dtype=ID_DTYPE, mode="w+", shape=(num_vertices,))
    prev = None
    total = 0
    for first, rec in edgefile.iter_windows(path, payload_bytes, _window_size(memory_budget, payload_bytes)):
        src, dst = rec["src"], rec["dst"]
        over = (src >= num_vertices) | (dst >= num_vertices)
        if over.any():
            i = int(np.flatnonzero(over)[0])
            raise PreprocessError(f"record {first + i}: vertex ID exceeds {num_vertices - 1}", first + i)
        if check_sorted:
            s = src.astype(np.int64)
            d = dst.astype(np.int64)
            if prev is not None:
                s = np.r_[prev[0], s]
                d = np.r_[prev[1], d]
                base = first - 1
            else:
                base = first
            ds = np.diff(s)
            bad = (ds < 0) | ((ds == 0) & (np.diff(d) < 0))
            if bad.any():
                i = base + int(np.flatnonzero(bad)[0]) + 1
                raise PreprocessError(f"record {i}: input not sorted by (src, dst)", i)
            prev = (int(src[-1]), int(dst[-1]))
        u, c = np.unique(src, return_counts=True)
        outd[u] += c.astype(ID_DTYPE)
        u, c = np.unique(dst, return_counts=True)
        ind[u] += c.astype(ID_DTYPE)
        total += len(rec)
    outd.flush()
    ind.flush()
    return outd, ind, total


def _weight_prefix(outd, ind, alpha, tmpdir, window=1 << 20):
    n = len(outd)
    prefix = np.memmap(os.path.join(tmpdir, "prefix.tmp"), dtype=np.int64, mode="w+", shape=(n + 1,))
    prefix[0] = 0
    run = 0
    for a in range(0, n, window):
        b = min(a + window, n)
        w = alpha + np.asarray(outd[a:b], dtype=np.int64) + np.asarray(ind[a:b], dtype=np.int64)
        c = np.cumsum(w) + run
        prefix[a + 1:b + 1] = c
        run = int(c[-1])
    return prefix


class _IdListWriter:
    """Append-only ascending u64 list that drops repeats across windows."""

    def __init__(self, path):
        self.path = path
        self.length = 0
        self.last = -1
        open(path, "wb").close()

    def add(self, ids):
        if len(ids) == 0:
            return
        ids = np.asarray(ids, dtype=ID_DTYPE)
        if int(ids[0]) == self.last:
            ids = ids[1:]
        if len(ids) == 0:
            return
        with open(self.path, "ab") as f:
            f.write(ids.tobytes())
        self.length += len(ids)
        self.last = int(ids[-1])


def _global_batch_tables(layout: PartitionLayout, batching: BatchLayout):
    """Per global batch: (node, local batch index, lo, hi)."""
    table = []
    for j in range(layout.num_partitions):
        for b, (lo, hi) in enumerate(batching.batches_of(layout, j)):
            table.append((j, b, lo, hi))
    return table


def build_chunks(edge_path, root, meta: GraphMeta, layout: PartitionLayout, batching: BatchLayout,
                 memory_budget: int = 64 << 20):
    """Stream the sorted edge list into per-(source partition, destination batch) chunks.

    Filter lists and per-batch pull lists are collected in the same pass.
    Returns ``(chunk records, filter records)``.
    """
    P = layout.num_partitions
    k = meta.edge_payload_bytes
    gtable = _global_batch_tables(layout, batching)
    gstarts = np.array([t[2] for t in gtable], dtype=np.int64)
    tmpdir = os.path.join(root, "tmp")
    os.makedirs(tmpdir, exist_ok=True)
    for j in range(P):
        for sub in ("chunks", "dispatch", "filter"):
            os.makedirs(os.path.join(root, f"node{j}", sub), exist_ok=True)

    writers: Dict[Tuple[int, int], ChunkFileWriter] = {}
    counts: Dict[Tuple[int, int], int] = {}
    filters = {(i, j): _IdListWriter(os.path.join(root, f"node{i}", "filter", f"to{j}.ids"))
               for i in range(P) for j in range(P) if i != j}
    records = []

    def finish(p, g):
        w = writers.pop((p, g))
        j, b, _, _ = gtable[g]
        plo, phi = layout.range_of(p)
        rel = f"node{j}/chunks/p{p}_b{b}"
        csr = should_build_csr(phi - plo, w.count, meta.csr_inflate_ratio)
        w.finish(os.path.join(root, rel + ".dcsr"), os.path.join(root, rel + ".csr") if csr else None)
        counts[(p, g)] = w.count

    current_p = 0
    for first, rec in edgefile.iter_windows(edge_path, k, _window_size(memory_budget, k)):
        src = rec["src"]
        dst = rec["dst"]
        payload = edgefile.payload_of(rec, k)
        sp = layout.partition_of(src)
        g = np.searchsorted(gstarts, dst.astype(np.int64), side="right") - 1
        key = sp.astype(np.int64) * len(gtable) + g
        order = np.argsort(key, kind="stable")
        key_s = key[order]
        cut = np.flatnonzero(np.r_[True, key_s[1:] != key_s[:-1], True])
        first_p = int(sp[0])
        # Writers of partitions the sorted stream has left behind are complete.
        for (p, gg) in [x for x in writers if x[0] < first_p]:
            finish(p, gg)
        for a, b in zip(cut[:-1], cut[1:]):
            kk = int(key_s[a])
            p, gg = divmod(kk, len(gtable))
            sel = order[a:b]
            w = writers.get((p, gg))
            if w is None:
                plo, phi = layout.range_of(p)
                w = writers[(p, gg)] = ChunkFileWriter(plo, phi, k, tmpdir)
            w.add(src[sel], dst[sel], payload[sel])
        # Filter lists: sources with an edge into another partition.
        dp = layout.partition_of(dst)
        cross = sp != dp
        if cross.any():
            pk = sp[cross].astype(np.int64) * P + dp[cross]
            s_cross = src[cross]
            o = np.lexsort((s_cross, pk))
            pk, s_cross = pk[o], s_cross[o]
            cuts = np.flatnonzero(np.r_[True, pk[1:] != pk[:-1], True])
            for a, b in zip(cuts[:-1], cuts[1:]):
                i, j = divmod(int(pk[a]), P)
                filters[(i, j)].add(np.unique(s_cross[a:b]))
        current_p = int(sp[-1])
    for (p, gg) in list(writers):
        finish(p, gg)

    for p in range(P):
        for g, (j, b, _, _) in enumerate(gtable):
            n = counts.get((p, g), 0)
            rel = f"node{j}/chunks/p{p}_b{b}"
            has_csr = n > 0 and os.path.exists(os.path.join(root, rel + ".csr"))
            records.append(ChunkRecord(p=p, node=j, batch=b, edges=n, has_csr=has_csr,
                                       dcsr=rel + ".dcsr" if n else None,
                                       csr=rel + ".csr" if has_csr else None))
    frecs = [{"from": i, "to": j, "path": os.path.relpath(w.path, root), "length": w.length}
             for (i, j), w in sorted(filters.items())]
    shutil.rmtree(tmpdir, ignore_errors=True)
    return records, frecs


def build_filter_lists(edge_path, layout: PartitionLayout, payload_bytes: int = 0,
                       memory_budget: int = 64 << 20) -> Dict[Tuple[int, int], np.ndarray]:
    """In-memory variant of the filter-list pass (for inspection and tests)."""
    P = layout.num_partitions
    out = {(i, j): [] for i in range(P) for j in range(P) if i != j}
    for _, rec in edgefile.iter_windows(edge_path, payload_bytes, _window_size(memory_budget, payload_bytes)):
        sp = layout.partition_of(rec["src"])
        dp = layout.partition_of(rec["dst"])
        for i, j in out:
            m = (sp == i) & (dp == j)
            if m.any():
                out[(i, j)].append(np.unique(rec["src"][m]))
    return {key: (np.unique(np.concatenate(v)).astype(ID_DTYPE) if v else np.zeros(0, ID_DTYPE))
            for key, v in out.items()}


def build_dispatch_structures(root, meta: GraphMeta, layout: PartitionLayout, batching: BatchLayout,
                              chunks: List[ChunkRecord], window: int = 1 << 16) -> List[DispatchRecord]:
    """Derive dispatching graphs (src -> local batch) and pull lists from built chunks."""
    from .encoding import read_chunk

    P = layout.num_partitions
    by_key = {(c.p, c.node, c.batch): c for c in chunks}
    tmpdir = os.path.join(root, "tmp")
    os.makedirs(tmpdir, exist_ok=True)
    out = []
    for j in range(P):
        nb = len(batching.batches_of(layout, j))
        for p in range(P):
            plo, phi = layout.range_of(p)
            pulls = []
            srcs_per_batch = []
            for b in range(nb):
                c = by_key[(p, j, b)]
                rel = f"node{j}/dispatch/pull_p{p}_b{b}.ids"
                if c.edges:
                    ids = np.asarray(read_chunk(os.path.join(root, c.dcsr)).srcs)
                else:
                    ids = np.zeros(0, dtype=ID_DTYPE)
                ids.astype(ID_DTYPE).tofile(os.path.join(root, rel))
                pulls.append({"batch": b, "path": rel, "length": int(len(ids))})
                srcs_per_batch.append(read_ids(os.path.join(root, rel)))
            w = ChunkFileWriter(plo, phi, 0, tmpdir)
            # Stream by source window: merge batch source lists into sorted (src, batch) pairs.
            for a in range(plo, phi, window):
                z = min(a + window, phi)
                parts_s, parts_b = [], []
                for b, ids in enumerate(srcs_per_batch):
                    if len(ids) == 0:
                        continue
                    l = int(np.searchsorted(ids, a))
                    r = int(np.searchsorted(ids, z))
                    if r > l:
                        parts_s.append(np.asarray(ids[l:r]))
                        parts_b.append(np.full(r - l, b, dtype=ID_DTYPE))
                if parts_s:
                    s = np.concatenate(parts_s)
                    bb = np.concatenate(parts_b)
                    o = np.lexsort((bb, s))
                    w.add(s[o], bb[o], np.zeros((len(s), 0), np.uint8))
            del srcs_per_batch
            rel = f"node{j}/dispatch/p{p}"
            pairs = w.count
            nsrc = w.nsrc
            csr = should_build_csr(phi - plo, pairs, meta.csr_inflate_ratio)
            if pairs:
                w.finish(os.path.join(root, rel + ".dcsr"), os.path.join(root, rel + ".csr") if csr else None)
            else:
                w.abort()
            out.append(DispatchRecord(p=p, node=j, pairs=pairs, sources=nsrc, has_csr=bool(pairs and csr),
                                      dcsr=rel + ".dcsr" if pairs else None,
                                      csr=rel + ".csr" if pairs and csr else None, pull=pulls))
    shutil.rmtree(tmpdir, ignore_errors=True)
    return out


@dataclass
class PreprocessConfig:
    num_vertices: int
    payload_bytes: int = 0
    nodes: int = 1
    alpha: Optional[int] = None
    batch_size: Optional[int] = None
    memory_budget: int = 64 << 20
    threads: int = 1
    mode: str = "semi"
    vertex_record_bytes: int = 32
    csr_inflate_ratio: float = 32.0
    gamma: int = 1024
    filter_skip_ratio: float = 2.0
    reversed: bool = False


def preprocess(edge_path, out_dir, cfg: PreprocessConfig, layout: Optional[PartitionLayout] = None,
               batch_size: Optional[int] = None) -> Manifest:
    """Full preprocessing pipeline; returns the saved manifest."""
    os.makedirs(out_dir, exist_ok=True)
    tmpdir = os.path.join(out_dir, "tmp")
    os.makedirs(tmpdir, exist_ok=True)
    if cfg.payload_bytes < 0:
        raise PreprocessError("payload bytes must be >= 0")
    outd, ind, nedges = scan_degrees(edge_path, cfg.num_vertices, cfg.payload_bytes, out_dir, cfg.memory_budget)
    P = cfg.nodes
    alpha = 2 * P - 1 if cfg.alpha is None else cfg.alpha
    meta = GraphMeta(cfg.num_vertices, nedges, cfg.payload_bytes, P, alpha, cfg.csr_inflate_ratio,
                     cfg.gamma, cfg.filter_skip_ratio)
    if layout is None:
        prefix = _weight_prefix(outd, ind, alpha, tmpdir)
        layout = PartitionLayout(tuple(partition_prefix(prefix, P)))
        del prefix
    if batch_size is None:
        batch_size = cfg.batch_size or choose_batch_size(
            cfg.mode, cfg.memory_budget, cfg.threads, cfg.vertex_record_bytes,
            [layout.size_of(p) for p in range(P)])
    batching = BatchLayout(batch_size)
    log.info("partitions %s, batch size %d", layout.boundaries, batch_size)
    chunks, filters = build_chunks(edge_path, out_dir, meta, layout, batching, cfg.memory_budget)
    dispatch = build_dispatch_structures(out_dir, meta, layout, batching, chunks)
    inc = [int(np.asarray(ind[a:b], dtype=np.int64).sum()) for a, b in zip(layout.boundaries, layout.boundaries[1:])]
    out = [int(np.asarray(outd[a:b], dtype=np.int64).sum()) for a, b in zip(layout.boundaries, layout.boundaries[1:])]
    del outd, ind
    man = Manifest(meta, layout, batching, chunks, filters, dispatch, inc, out, root=out_dir)
    if cfg.reversed:
        rdir = os.path.join(out_dir, "reversed")
        os.makedirs(rdir, exist_ok=True)
        build_reversed_graph(edge_path, rdir, cfg, layout, batch_size)
        man.reversed = os.path.join("reversed", MANIFEST_NAME)
    man.save()
    shutil.rmtree(tmpdir, ignore_errors=True)
    return man


def build_reversed_graph(edge_path, out_dir, cfg: PreprocessConfig, layout: PartitionLayout,
                         batch_size: int) -> Manifest:
    """Preprocess the (dst, src)-swapped graph with the forward graph's vertex layout."""
    os.makedirs(out_dir, exist_ok=True)
    swapped = os.path.join(out_dir, "edges.swapped")
    edgefile.external_sort(edge_path, swapped, cfg.payload_bytes, cfg.memory_budget, by="src", swap=True)
    rcfg = PreprocessConfig(**{**vars(cfg), "reversed": False})
    try:
        return preprocess(swapped, out_dir, rcfg, layout=layout, batch_size=batch_size)
    finally:
        os.unlink(swapped)


def load_all_edges(man: Manifest):
    """Decode every chunk back into ``(src, dst, payload)`` arrays (small graphs only)."""
    from .encoding import decode, read_chunk

    srcs, dsts, pays = [], [], []
    for c in man.chunks:
        if c.edges:
            e = decode(read_chunk(man.path(c.dcsr)))
            srcs.append(e.src)
            dsts.append(e.dst)
            pays.append(e.payload)
    k = man.meta.edge_payload_bytes
    if not srcs:
        return np.zeros(0, ID_DTYPE), np.zeros(0, ID_DTYPE), np.zeros((0, k), np.uint8)
    return np.concatenate(srcs), np.concatenate(dsts), np.concatenate(pays)
