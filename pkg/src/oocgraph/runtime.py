"""The execution engine: vertex passes and the four-phase edge pass.

Every rank runs the same driver program (SPMD) and every ``process_*``
call is collective.  An edge pass on node ``i`` runs as

1. generate: ``signal`` runs per batch; each batch's messages go to one
   ascending block file;
2. pass: a sender thread streams blocks to peers in round-robin order,
   filtered by ``L_ij`` when that pays off;
3. dispatch: a dispatcher thread routes each inbound block to per-batch
   message segments (push, pull, or raw);
4. process: per source group, each batch joins its segments with its edge
   chunk and calls ``slot``.

Dispatch and processing overlap: group ``s`` is processed as soon as all of
its frames are dispatched, while later groups are still arriving.

UDFs are vectorized over a batch.  ``signal(ctx)`` and ``work(ctx)`` get a
:class:`BatchContext`; ``slot(ctx, msg, src, dst, data)`` gets arrays with
one entry per (message, edge) pair in processing order.
"""
from __future__ import annotations

import csv
import logging
import os
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .encoding import DEFAULT_WINDOW, choose_read_representation, iter_edges_for_sources, read_chunk
from .layout import ID_DTYPE
from .preprocess import Manifest, read_ids
from .storage import BITMAP, RecoveryError, RunJournal, VertexArray, decode_value
from .transport import (KIND_JOURNAL, KIND_MESSAGES, KIND_REDUCTION, FLAG_FILTERED, ClusterConfig, Frame,
                        Transport, decode_number, encode_number, receive_order, round_robin_targets)

log = logging.getLogger(__name__)

FAULT_EXIT = 17
FAULT_POINTS = ("before", "generate", "mid", "commit", "after")
STRATEGIES = ("push", "pull", "none")


class EngineError(RuntimeError):
    pass


class MemoryBudgetError(EngineError):
    pass


class MessageSizeError(EngineError):
    pass


class TrafficBoundViolation(EngineError):
    pass


class ManifestMismatch(EngineError):
    pass


@dataclass
class EngineConfig:
    memory_budget_bytes: int = 256 << 20
    threads: int = 1
    dispatch_cost_factor: float = 4.0
    filter_skip_ratio: Optional[float] = None  # None: take the manifest's value
    gamma: Optional[int] = None
    checkpoints_keep: int = 2  # 0 disables checkpointing
    pipeline_queue_depth: int = 8
    window: Optional[int] = None  # edges per join window; None: derived from the budget
    self_order: str = "last"
    force_dispatch: Optional[str] = None
    force_filter: Optional[bool] = None
    strict: bool = False
    durable: bool = False
    fault: Optional[str] = None  # "rank:ordinal:point"
    inject_oversend: bool = False  # test hook: skip the filter but still flag blocks as filtered

    def __post_init__(self):
        if self.memory_budget_bytes <= 0:
            raise ValueError("memory_budget_bytes must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.dispatch_cost_factor <= 0:
            raise ValueError("dispatch_cost_factor must be positive")
        if self.checkpoints_keep < 0:
            raise ValueError("checkpoints_keep must be >= 0")
        if self.self_order not in ("first", "last"):
            raise ValueError("self_order must be 'first' or 'last'")
        if self.force_dispatch is not None and self.force_dispatch not in STRATEGIES:
            raise ValueError(f"force_dispatch must be one of {STRATEGIES}")
        if self.fault is not None:
            parse_fault(self.fault)

    @property
    def join_window(self) -> int:
        if self.window:
            return self.window
        return int(min(DEFAULT_WINDOW, max(1024, self.memory_budget_bytes // 512)))


def parse_fault(spec: str) -> Tuple[int, int, str]:
    try:
        r, c, point = spec.split(":")
        r, c = int(r), int(c)
    except ValueError:
        raise ValueError(f"fault spec {spec!r} is not rank:ordinal:point") from None
    if point not in FAULT_POINTS:
        raise ValueError(f"fault point {point!r} not in {FAULT_POINTS}")
    return r, c, point


# -- memory ------------------------------------------------------------------

class MemoryGovernor:
    """Admission control for engine-owned buffers.

    Every stage reserves its buffer bytes before allocating them; a request
    waits while the budget is in use and fails outright if it could never fit.
    """

    def __init__(self, budget: int):
        self.budget = int(budget)
        self.used = 0
        self.peak = 0
        self._cv = threading.Condition()

    @contextmanager
    def hold(self, nbytes: int, what: str = "buffer"):
        nbytes = int(nbytes)
        if nbytes > self.budget:
            raise MemoryBudgetError(f"{what} needs {nbytes} bytes, budget is {self.budget}")
        with self._cv:
            while self.used + nbytes > self.budget:
                self._cv.wait()
            self.used += nbytes
            self.peak = max(self.peak, self.used)
        try:
            yield
        finally:
            with self._cv:
                self.used -= nbytes
                self._cv.notify_all()


# -- reductions --------------------------------------------------------------

def exact_sum(values) -> Fraction:
    """Exact sum of a float64 array as a Fraction (order independent)."""
    a = np.asarray(values, dtype=np.float64).ravel()
    a = a[a != 0]
    if len(a) == 0:
        return Fraction(0)
    if not np.isfinite(a).all():
        raise EngineError("non-finite value in a float reduction")
    m, e = np.frexp(a)
    mant = (m * float(1 << 53)).astype(np.int64)  # exact: |m| < 1
    e = e.astype(np.int64) - 53
    emin = int(e.min())
    total = 0
    for ex in np.unique(e):
        sel = mant[e == ex]
        s = 0
        for k in range(0, len(sel), 512):  # 512 * 2^53 < 2^63
            s += int(sel[k:k + 512].sum())
        total += s << int(ex - emin)
    return Fraction(total) * Fraction(2) ** emin


class Reduction:
    """Order-independent accumulator for UDF return values."""

    def __init__(self, kind: str = "int"):
        if kind not in ("int", "float"):
            raise ValueError("reduction kind must be 'int' or 'float'")
        self.kind = kind
        self.total = 0 if kind == "int" else Fraction(0)

    def add(self, x):
        if x is None:
            return
        if isinstance(x, Reduction):
            self.total += x.total
            return
        a = np.asarray(x)
        if a.dtype.kind in "biu":
            self.total += int(a.sum(dtype=np.int64)) if a.ndim else int(a)
        elif a.dtype.kind == "f":
            if self.kind == "int":
                raise EngineError("float value returned to an integer reduction")
            self.total += exact_sum(a)
        else:
            raise EngineError(f"cannot reduce values of dtype {a.dtype}")

    def result(self):
        return int(self.total) if self.kind == "int" else float(self.total)


# -- messages ----------------------------------------------------------------

def message_record_dtype(message_dtype) -> np.dtype:
    md = np.dtype(message_dtype)
    if md.byteorder == ">" or md.hasobject:
        raise MessageSizeError(f"message dtype {md} must be fixed-size little-endian")
    return np.dtype([("src", ID_DTYPE), ("msg", md)])


@dataclass
class MessageBlock:
    ordinal: int
    source_node: int
    records: np.ndarray

    def __post_init__(self):
        s = self.records["src"]
        if len(s) > 1 and np.any(s[1:] <= s[:-1]):
            raise EngineError("message block sources not strictly ascending")

    @property
    def count(self) -> int:
        return len(self.records)


def in_sorted(values: np.ndarray, sorted_ids) -> np.ndarray:
    """Membership mask of ascending ``values`` in ascending ``sorted_ids`` (a merge join)."""
    out = np.zeros(len(values), dtype=bool)
    if len(values) == 0 or len(sorted_ids) == 0:
        return out
    lo = int(np.searchsorted(sorted_ids, values[0]))
    hi = int(np.searchsorted(sorted_ids, values[-1], side="right"))
    w = np.asarray(sorted_ids[lo:hi])
    if len(w) == 0:
        return out
    pos = np.minimum(np.searchsorted(w, values), len(w) - 1)
    return w[pos] == values


def filter_messages(records: np.ndarray, filter_ids) -> np.ndarray:
    """Records whose source is in ``filter_ids``; both inputs must be ascending."""
    s = records["src"]
    if len(s) > 1 and np.any(s[1:] <= s[:-1]):
        raise EngineError("filter input not ascending")
    return records[in_sorted(s, filter_ids)]


def should_filter(filter_len: int, msg_count: int, skip_ratio: float) -> bool:
    """Filter unless ``|L_ij| / |M_i| >= skip_ratio``."""
    if msg_count == 0:
        return True
    return filter_len / msg_count < skip_ratio


def select_dispatch_strategy(s: int, j: int, msg_count: int, dispatch_list_size: int,
                             pipeline_idle: bool, c: float = 4.0) -> str:
    if dispatch_list_size > c * msg_count:
        return "none"
    if s == j or pipeline_idle:
        return "pull"
    return "push"


def iter_dispatch_push(records: np.ndarray, dispatch_chunk, window: int = DEFAULT_WINDOW):
    """Route a block to batches in one scan of the dispatching graph.

    Yields ``(batch, records)`` pieces; the pieces of any one batch come out
    in ascending source order.
    """
    srcs = records["src"]
    for ws, wb, _ in iter_edges_for_sources(dispatch_chunk, srcs, window):
        idx = np.searchsorted(srcs, ws)
        wb = wb.astype(np.int64)
        order = np.argsort(wb, kind="stable")
        wb, idx = wb[order], idx[order]
        cuts = np.flatnonzero(np.r_[True, wb[1:] != wb[:-1], True])
        for a, z in zip(cuts[:-1], cuts[1:]):
            yield int(wb[a]), records[idx[a:z]]


def dispatch_push(records: np.ndarray, dispatch_chunk, window: int = DEFAULT_WINDOW) -> Dict[int, np.ndarray]:
    """Dict form of :func:`iter_dispatch_push`: batch -> all its records."""
    parts: Dict[int, List[np.ndarray]] = {}
    for b, rec in iter_dispatch_push(records, dispatch_chunk, window):
        parts.setdefault(b, []).append(rec)
    return {b: np.concatenate(p) for b, p in sorted(parts.items())}


def dispatch_pull(records: np.ndarray, pull_ids) -> np.ndarray:
    """The records one batch needs: sources with an edge into it."""
    return records[in_sorted(records["src"], pull_ids)]


# -- contexts ----------------------------------------------------------------

class BatchContext:
    """What a UDF sees of one batch: its range, vertex IDs, and array views.

    ``ctx[array]`` is the whole batch's values for that array (index with
    ``v - ctx.lo`` or ``ctx.local``).  Writes to views of arrays the call
    may modify are persisted after the UDF returns.
    """

    def __init__(self, engine: "Engine", batch: int, lo: int, hi: int, views: Dict[str, np.ndarray],
                 vertices: Optional[np.ndarray] = None):
        self.engine = engine
        self.batch = batch
        self.lo = lo
        self.hi = hi
        self._views = views
        self.vertices = vertices

    @property
    def local(self) -> np.ndarray:
        return (self.vertices - np.uint64(self.lo)).astype(np.int64)

    @property
    def num_vertices(self) -> int:
        return self.engine.num_vertices

    def __getitem__(self, arr) -> np.ndarray:
        name = arr if isinstance(arr, str) else arr.name
        try:
            return self._views[name]
        except KeyError:
            raise EngineError(f"array {name!r} was not passed to this call") from None


# -- counters ----------------------------------------------------------------

@dataclass
class PhaseTrafficCounters:
    node: int
    call: int
    peers: int
    generated: int = 0
    sent: List[int] = field(default_factory=list)
    received: List[int] = field(default_factory=list)
    filtered: List[bool] = field(default_factory=list)
    chunk_bytes_read: int = 0
    generate_varray_read: int = 0
    varray_read: Dict[str, int] = field(default_factory=dict)
    varray_written: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.sent = self.sent or [0] * self.peers
        self.received = self.received or [0] * self.peers
        self.filtered = self.filtered or [False] * self.peers


def check_traffic_bounds(c: PhaseTrafficCounters, man: Manifest, filtering_off: bool = False,
                         skip_ratio: Optional[float] = None) -> List[str]:
    """Return every violated per-node bound on generated, sent and received messages.

    Unfiltered pass-through sends at most ``|L_ij| / skip_ratio`` messages, so
    the ``|L_ij|`` and edge-count bounds hold whenever ``skip_ratio >= 1``.
    """
    i = c.node
    r = man.meta.filter_skip_ratio if skip_ratio is None else skip_ratio
    P = man.layout.num_partitions
    Vi = man.layout.size_of(i)
    bad = []
    if c.generated > Vi:
        bad.append(f"node {i}: generated {c.generated} > |V_i| = {Vi}")
    for j in range(P):
        if j == i:
            continue
        if c.sent[j] > Vi:
            bad.append(f"node {i}: sent {c.sent[j]} to {j} > |V_i| = {Vi}")
        if not filtering_off:
            L = man.filter_record(i, j)["length"]
            if c.sent[j] > L and (c.filtered[j] or r >= 1):
                bad.append(f"node {i}: sent {c.sent[j]} to {j} > |L_ij| = {L}")
        Vj = man.layout.size_of(j)
        if c.received[j] > Vj:
            bad.append(f"node {i}: received {c.received[j]} from {j} > |V_j| = {Vj}")
    if not filtering_off and r >= 1:
        if sum(c.sent) > man.partition_out_edges[i]:
            bad.append(f"node {i}: sent {sum(c.sent)} in total > |E_i^o| = {man.partition_out_edges[i]}")
        if sum(c.received) > man.partition_in_edges[i]:
            bad.append(f"node {i}: received {sum(c.received)} in total > |E_i^i| = {man.partition_in_edges[i]}")
    return bad


def metrics_header(P: int) -> List[str]:
    return (["node", "call", "phase", "msgs_generated"] + [f"msgs_sent_peer{j}" for j in range(P)]
            + [f"msgs_recv_peer{j}" for j in range(P)]
            + ["chunk_bytes_read", "varray_bytes_read", "varray_bytes_written"])


# -- engine ------------------------------------------------------------------

class Engine:
    """One rank's engine over a preprocessed graph."""

    def __init__(self, graph_dir: str, work_dir: str, transport: Optional[Transport] = None,
                 config: Optional[EngineConfig] = None, recover: bool = False, metrics_path: Optional[str] = None):
        self.cfg = config or EngineConfig()
        self.man = Manifest.load(graph_dir)
        if transport is None:
            transport = Transport(ClusterConfig.single()).start()
        self.transport = transport
        self.rank = transport.rank
        self.P = self.man.layout.num_partitions
        if transport.size != self.P:
            raise ManifestMismatch(f"graph has {self.P} partitions but the cluster has {transport.size} nodes")
        self.num_vertices = self.man.meta.num_vertices
        self.lo, self.hi = self.man.layout.range_of(self.rank)
        self.batches = self.man.batching.batches_of(self.man.layout, self.rank)
        self.governor = MemoryGovernor(self.cfg.memory_budget_bytes)
        self.node_dir = os.path.join(work_dir, f"node{self.rank}")
        self.array_dir = os.path.join(self.node_dir, "arrays")
        self.msg_dir = os.path.join(self.node_dir, "msgs")
        self.checkpointing = self.cfg.checkpoints_keep > 0
        self._rev: Optional[Manifest] = None
        self._pool = ThreadPoolExecutor(self.cfg.threads) if self.cfg.threads > 1 else None
        self.arrays: Dict[str, VertexArray] = {}
        self.calls = 0
        self.target = 0
        self.history: List[PhaseTrafficCounters] = []
        self._fault = parse_fault(self.cfg.fault) if self.cfg.fault else None
        if recover:
            self._recover()
        else:
            shutil.rmtree(self.node_dir, ignore_errors=True)
            os.makedirs(self.array_dir)
        os.makedirs(self.msg_dir, exist_ok=True)
        self.journal = RunJournal(os.path.join(self.node_dir, "journal.log"), self.cfg.durable)
        self.metrics_path = metrics_path
        if metrics_path and not (recover and os.path.exists(metrics_path)):
            with open(metrics_path, "w", newline="") as f:
                csv.writer(f).writerow(metrics_header(self.P))

    def _recover(self):
        if not self.checkpointing:
            raise RecoveryError("recovery needs checkpointing (checkpoints_keep > 0)")
        jpath = os.path.join(self.node_dir, "journal.log")
        local = RunJournal(jpath).records if os.path.exists(jpath) else []
        recs = self.transport.broadcast(local if self.rank == 0 else None, 0, KIND_JOURNAL)
        if self.rank != 0:
            os.makedirs(self.node_dir, exist_ok=True)
            RunJournal(jpath).replace(recs)
        self.target = recs[-1]["ordinal"] if recs else 0
        os.makedirs(self.array_dir, exist_ok=True)
        shutil.rmtree(self.msg_dir, ignore_errors=True)
        log.info("rank %d: recovering to call %d", self.rank, self.target)

    def close(self):
        for a in self.arrays.values():
            a.close()
        if self._pool is not None:
            self._pool.shutdown()

    @property
    def replaying(self) -> bool:
        return self.calls < self.target

    def reversed_manifest(self) -> Manifest:
        if self._rev is None:
            if self.man.reversed is None:
                raise EngineError("this computation needs the reversed graph; preprocess with --reversed")
            rev = self.man.load_reversed()
            if rev.layout != self.man.layout or rev.batching != self.man.batching:
                raise ManifestMismatch("reversed graph layout differs from the forward graph")
            self._rev = rev
        return self._rev

    # -- arrays
    def vertex_array(self, name: str, dtype, init=None) -> VertexArray:
        """Create (or, while replaying a recovered run, reopen) a vertex array."""
        if name in self.arrays:
            raise EngineError(f"vertex array {name!r} already exists")
        va = VertexArray(self.array_dir, name, BITMAP if dtype == BITMAP else dtype, self.batches,
                         checkpointing=self.checkpointing, keep=self.cfg.checkpoints_keep,
                         durable=self.cfg.durable)
        need = max((va.memory_bytes(b) for b in range(len(self.batches))), default=0)
        with self.governor.hold(need, f"array {name!r} batch"):
            if self.replaying:
                va.open_at(self.target)
            else:
                va.create(init, ordinal=self.calls)
        self.arrays[name] = va
        return va

    def degree_array(self, which: str = "out", graph: str = "forward") -> VertexArray:
        man = self.man if graph == "forward" else self.reversed_manifest()
        path = man.path(man.degrees_out if which == "out" else man.degrees_in)
        deg = np.memmap(path, dtype=ID_DTYPE, mode="r")
        name = f"_deg_{which}_{graph}"
        if name in self.arrays:
            return self.arrays[name]
        return self.vertex_array(name, ID_DTYPE, init=lambda v: np.asarray(deg[int(v[0]):int(v[-1]) + 1]))

    def local_values(self, arr: VertexArray) -> np.ndarray:
        return arr.read_all()

    # -- helpers
    def _map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def _maybe_fault(self, ordinal: int, point: str):
        if self._fault and self._fault == (self.rank, ordinal, point):
            log.warning("rank %d: injected fault at call %d (%s)", self.rank, ordinal, point)
            logging.shutdown()
            os._exit(FAULT_EXIT)

    def _begin(self):
        self.calls += 1
        return self.calls, self.calls <= self.target

    def _replayed_value(self, ordinal):
        return self.journal.value_of(ordinal)

    def _commit(self, ordinal: int, kind: str, arrays: Iterable[VertexArray], red: Reduction):
        touched = {}
        for a in _unique(arrays):
            if a.commit(ordinal) is not None:
                touched[a.name] = ordinal
        self._maybe_fault(ordinal, "commit")
        # Gathering the contributions doubles as the commit barrier.
        vals = self.transport.gather(encode_number(red.total), ordinal, KIND_REDUCTION)
        rec = None
        if self.rank == 0:
            total = sum((decode_number(v) for v in vals), 0 if red.kind == "int" else Fraction(0))
            value = int(total) if red.kind == "int" else float(total)
            if self.checkpointing:
                rec = self.journal.append(ordinal, kind, touched, value)
            else:
                rec = {"ordinal": ordinal, "value": encode_number(value)}
        rec = self.transport.broadcast(rec, ordinal, KIND_JOURNAL)
        if self.rank != 0 and self.checkpointing:
            self.journal.append(ordinal, rec["kind"], rec["arrays"], decode_value(rec["value"]))
        value = decode_value(rec["value"])
        for a in self.arrays.values():
            a.gc(upto=ordinal)
        self._maybe_fault(ordinal, "after")
        return int(value) if red.kind == "int" else float(value)

    def _io_snapshot(self, arrays):
        return {a.name: (a.bytes_read, a.bytes_written) for a in _unique(arrays)}

    def _io_delta(self, counters, before, arrays):
        for a in _unique(arrays):
            r0, w0 = before[a.name]
            counters.varray_read[a.name] = a.bytes_read - r0
            counters.varray_written[a.name] = a.bytes_written - w0

    def _emit_metrics(self, c: PhaseTrafficCounters, phases):
        self.history.append(c)
        if not self.metrics_path:
            return
        P = self.P
        zero = [0] * P
        rows = []
        for phase in phases:
            gen = c.generated if phase == "generate" else 0
            sent = c.sent if phase == "pass" else zero
            recv = c.received if phase == "dispatch" else zero
            chunk = c.chunk_bytes_read if phase == "process" else 0
            vr = sum(c.varray_read.values()) if phase in ("vertices", "process") else 0
            vw = sum(c.varray_written.values()) if phase in ("vertices", "process") else 0
            if phase == "generate":
                vr = c.generate_varray_read
            rows.append([self.rank, c.call, phase, gen] + list(sent) + list(recv) + [chunk, vr, vw])
        with open(self.metrics_path, "a", newline="") as f:
            csv.writer(f).writerows(rows)

    def _read_active(self, active: Optional[VertexArray], b: int):
        lo, hi = self.batches[b]
        if active is None:
            return np.arange(lo, hi, dtype=ID_DTYPE)
        with self.governor.hold(active.memory_bytes(b), "active bitmap batch"):
            mask = active.read_batch(b)
        return np.flatnonzero(mask).astype(ID_DTYPE) + np.uint64(lo)

    # -- ProcessVertices
    def process_vertices(self, work: Callable, arrays: Sequence[VertexArray] = (),
                         active: Optional[VertexArray] = None, reduce: str = "int"):
        """Run ``work(ctx)`` on every (active) local batch; returns the cluster-wide sum."""
        ordinal, replay = self._begin()
        red = Reduction(reduce)
        if replay:
            return self._replayed_value(ordinal)
        self._maybe_fault(ordinal, "before")
        arrays = _unique(arrays)
        for a in arrays:
            a.begin_call()
        before = self._io_snapshot(arrays + ([active] if active is not None else []))
        nb = len(self.batches)

        def task(b):
            lo, hi = self.batches[b]
            vids = self._read_active(active, b)
            if len(vids) == 0:
                return None
            need = sum(a.memory_bytes(b) for a in arrays) + 2 * vids.nbytes
            with self.governor.hold(need, f"batch {b} vertex data"):
                views = {a.name: a.read_batch(b) for a in arrays}
                ret = work(BatchContext(self, b, lo, hi, views, vids))
                for a in arrays:
                    if a.is_dirty(b, views[a.name]):
                        a.write_batch_cow(b, views[a.name])
            if b == nb // 2:
                self._maybe_fault(ordinal, "mid")
            return ret

        try:
            for r in self._map(task, range(nb)):
                red.add(r)
        except BaseException:
            for a in arrays:
                a.abort()
            raise
        c = PhaseTrafficCounters(self.rank, ordinal, self.P)
        self._io_delta(c, before, arrays + ([active] if active is not None else []))
        self._emit_metrics(c, ["vertices"])
        return self._commit(ordinal, "vertices", arrays, red)

    # -- ProcessEdges
    def process_edges(self, signal: Callable, slot: Callable, signal_arrays: Sequence[VertexArray] = (),
                      slot_arrays: Sequence[VertexArray] = (), active: Optional[VertexArray] = None,
                      message_dtype="<f8", reduce: str = "int", graph: str = "forward"):
        """Signal along out-edges and fold messages with ``slot``; returns the cluster-wide slot sum."""
        ordinal, replay = self._begin()
        red = Reduction(reduce)
        if replay:
            return self._replayed_value(ordinal)
        if graph not in ("forward", "reversed"):
            raise ValueError("graph must be 'forward' or 'reversed'")
        man = self.man if graph == "forward" else self.reversed_manifest()
        self._maybe_fault(ordinal, "before")
        slot_arrays = _unique(slot_arrays)
        call = _EdgeCall(self, man, ordinal, signal, slot, _unique(signal_arrays), slot_arrays, active,
                         message_record_dtype(message_dtype), red)
        try:
            call.run()
        except BaseException:
            for a in slot_arrays:
                a.abort()
            call.cleanup()
            raise
        call.cleanup()
        return self._commit(ordinal, "edges", slot_arrays, red)


def _unique(arrays) -> List[VertexArray]:
    out, seen = [], set()
    for a in arrays:
        if a is not None and a.name not in seen:
            seen.add(a.name)
            out.append(a)
    return out


class _EdgeCall:
    """State of one ProcessEdges invocation on one node."""

    def __init__(self, eng: Engine, man: Manifest, ordinal, signal, slot, signal_arrays, slot_arrays,
                 active, rdt: np.dtype, red: Reduction):
        self.eng = eng
        self.man = man
        self.ordinal = ordinal
        self.signal = signal
        self.slot = slot
        self.signal_arrays = signal_arrays
        self.slot_arrays = slot_arrays
        self.active = active
        self.rdt = rdt
        self.red = red
        self.i = eng.rank
        self.P = eng.P
        self.nb = len(eng.batches)
        self.dir = os.path.join(eng.msg_dir, f"c{ordinal}")
        shutil.rmtree(self.dir, ignore_errors=True)
        os.makedirs(self.dir)
        self.counters = PhaseTrafficCounters(self.i, ordinal, self.P)
        self.blocks: List[Tuple[Optional[str], int]] = []
        # segments[s][b]: (path, byte offset, record count) in processing order
        self.segments = [[[] for _ in range(self.nb)] for _ in range(self.P)]
        self._sizes: Dict[str, int] = {}
        self.ready = [threading.Event() for _ in range(self.P)]
        self.idle = threading.Event()
        self.error: Optional[BaseException] = None
        cfg = eng.cfg
        self.skip_ratio = cfg.filter_skip_ratio if cfg.filter_skip_ratio is not None else man.meta.filter_skip_ratio
        self.gamma = cfg.gamma if cfg.gamma is not None else man.meta.gamma
        self.window = cfg.join_window
        self.k = man.meta.edge_payload_bytes

    # phase 1
    def generate(self):
        eng = self.eng
        before = eng._io_snapshot(self.signal_arrays + ([self.active] if self.active is not None else []))

        def task(b):
            lo, hi = eng.batches[b]
            vids = eng._read_active(self.active, b)
            if len(vids) == 0:
                return None, 0
            need = sum(a.memory_bytes(b) for a in self.signal_arrays) + 3 * len(vids) * self.rdt.itemsize
            with eng.governor.hold(need, f"batch {b} signal data"):
                views = {a.name: a.read_batch(b) for a in self.signal_arrays}
                out = self.signal(BatchContext(eng, b, lo, hi, views, vids))
                if isinstance(out, tuple):
                    emit, vals = out
                    emit = np.asarray(emit, dtype=bool)
                else:
                    emit, vals = None, out
                vals = np.asarray(vals)
                md = self.rdt["msg"]
                if vals.shape[:1] != (len(vids),) or vals.dtype.itemsize != md.itemsize:
                    raise MessageSizeError(
                        f"signal returned {vals.dtype} x {vals.shape}; declared {md} x ({len(vids)},)")
                if emit is not None:
                    vids, vals = vids[emit], vals[emit]
                n = len(vids)
                if n == 0:
                    return None, 0
                rec = np.empty(n, dtype=self.rdt)
                rec["src"] = vids
                rec["msg"] = vals
                path = os.path.join(self.dir, f"gen_b{b}.msg")
                rec.tofile(path)
            return path, n

        self.blocks = eng._map(task, range(self.nb))
        self.counters.generated = sum(n for _, n in self.blocks)
        c = PhaseTrafficCounters(self.i, self.ordinal, self.P)
        eng._io_delta(c, before, self.signal_arrays + ([self.active] if self.active is not None else []))
        self.counters.generate_varray_read = sum(c.varray_read.values())

    def _read_block(self, path, n):
        return np.fromfile(path, dtype=self.rdt, count=n)

    # phase 2
    def send_all(self):
        eng = self.eng
        t = eng.transport
        M = self.counters.generated
        for j in round_robin_targets(self.i, self.P):
            frec = self.man.filter_record(self.i, j)
            force = eng.cfg.force_filter
            filt = force if force is not None else should_filter(frec["length"], M, self.skip_ratio)
            self.counters.filtered[j] = filt
            L = read_ids(self.man.path(frec["path"])) if filt else None
            for path, n in self.blocks:
                if not n:
                    continue
                with eng.governor.hold(2 * n * self.rdt.itemsize, "outbound block"):
                    rec = self._read_block(path, n)
                    if filt and not eng.cfg.inject_oversend:
                        rec = filter_messages(rec, L)
                    t.send(j, Frame(KIND_MESSAGES, self.i, self.ordinal, FLAG_FILTERED if filt else 0,
                                    len(rec), self.rdt["msg"].itemsize, rec.tobytes()))
                    self.counters.sent[j] += len(rec)
            t.send_stream(j, [], self.ordinal)

    # phase 3
    def _append(self, s, b, rec):
        if len(rec) == 0:
            return
        path = os.path.join(self.dir, f"in_s{s}_b{b}.msg")
        off = self._sizes.get(path, 0)
        with open(path, "ab") as f:
            rec.tofile(f)
        self._sizes[path] = off + rec.nbytes
        segs = self.segments[s][b]
        if segs and segs[-1][0] == path and segs[-1][1] + segs[-1][2] * self.rdt.itemsize == off:
            p, o, n = segs[-1]
            segs[-1] = (p, o, n + len(rec))
        else:
            segs.append((path, off, len(rec)))

    def dispatch_block(self, s: int, rec: np.ndarray, serial: int):
        eng = self.eng
        dr = self.man.dispatch_record(s, self.i)
        strategy = eng.cfg.force_dispatch or select_dispatch_strategy(
            s, self.i, len(rec), dr.pairs, self.idle.is_set(), eng.cfg.dispatch_cost_factor)
        if len(rec) == 0 or dr.pairs == 0:
            return
        if strategy == "none":
            path = os.path.join(self.dir, f"raw_s{s}_{serial}.msg")
            rec.tofile(path)
            for b in range(self.nb):
                if self.man.chunk(s, self.i, b).edges:
                    self.segments[s][b].append((path, 0, len(rec)))
        elif strategy == "pull":
            for ent in dr.pull:
                if ent["length"]:
                    self._append(s, ent["batch"], dispatch_pull(rec, read_ids(self.man.path(ent["path"]))))
        else:
            v_src = self.man.layout.size_of(s)
            dc = read_chunk(self.man.path(dr.dcsr))
            rep = choose_read_representation(len(rec), v_src, len(dc.srcs), self.gamma, dr.has_csr)
            chunk = read_chunk(self.man.path(dr.csr)) if rep == "csr" else dc
            for b, part in iter_dispatch_push(rec, chunk, self.window):
                self._append(s, b, part)

    def dispatch_all(self):
        try:
            serial = 0
            for path, n in self.blocks:
                if n:
                    with self.eng.governor.hold(n * self.rdt.itemsize, "self block"):
                        self.dispatch_block(self.i, self._read_block(path, n), serial)
                    serial += 1
            self.ready[self.i].set()
            for s in receive_order(self.i, self.P):
                for f in self.eng.transport.recv_stream(s, self.ordinal):
                    if f.message_bytes != self.rdt["msg"].itemsize:
                        raise MessageSizeError(f"frame from {s} has {f.message_bytes}-byte messages")
                    self.counters.received[s] += f.count
                    rec = np.frombuffer(f.payload, dtype=self.rdt)
                    with self.eng.governor.hold(2 * len(f.payload), "inbound block"):
                        self.dispatch_block(s, rec, serial)
                    serial += 1
                self.ready[s].set()
        except BaseException as e:  # noqa: BLE001 - handed to the main thread
            self.error = e
            for ev in self.ready:
                ev.set()

    # phase 4
    def process_group(self, s: int):
        eng = self.eng
        v_src = self.man.layout.size_of(s)
        k = self.k
        win_bytes = self.window * (8 * 6 + k + 2 * self.rdt.itemsize)

        def task(b):
            segs = self.segments[s][b]
            rec = self.man.chunk(s, self.i, b)
            if not segs or rec.edges == 0:
                return None, 0
            lo, hi = eng.batches[b]
            dc = read_chunk(self.man.path(rec.dcsr))
            cc = read_chunk(self.man.path(rec.csr)) if rec.has_csr else None
            piece = min(self.window, max(n for _, _, n in segs))
            need = sum(a.memory_bytes(b) for a in self.slot_arrays) + piece * self.rdt.itemsize + win_bytes
            part = Reduction(self.red.kind)
            nread = 0
            with eng.governor.hold(need, f"batch {b} slot data"):
                views = {a.name: a.read_batch(b) for a in self.slot_arrays}
                ctx = BatchContext(eng, b, lo, hi, views)
                for path, off, n in segs:
                    # |M| of the whole segment decides the representation; messages stream in pieces.
                    rep = choose_read_representation(n, v_src, len(dc.srcs), self.gamma, cc is not None)
                    chunk = cc if rep == "csr" else dc
                    nread += 16 * (n if rep == "csr" else len(dc.srcs))
                    for a in range(0, n, piece):
                        msgs = np.fromfile(path, dtype=self.rdt, count=min(piece, n - a),
                                           offset=off + a * self.rdt.itemsize)
                        srcs = msgs["src"]
                        for ws, wd, wp in iter_edges_for_sources(chunk, srcs, self.window):
                            m = msgs["msg"][np.searchsorted(srcs, ws)]
                            part.add(self.slot(ctx, m, ws, wd, wp))
                            nread += len(ws) * (8 + k)
                for a in self.slot_arrays:
                    if a.is_dirty(b, views[a.name]):
                        a.write_batch_cow(b, views[a.name])
            return part, nread

        for part, nread in eng._map(task, range(self.nb)):
            self.red.add(part)
            self.counters.chunk_bytes_read += nread

    def run(self):
        eng = self.eng
        before = eng._io_snapshot(self.slot_arrays)
        for a in self.slot_arrays:
            a.begin_call()
        # Generation finishes before anything is sent, so |M_i| is known for the filter rule.
        self.generate()
        eng._maybe_fault(self.ordinal, "generate")
        sender_err: List[BaseException] = []

        def sender():
            try:
                self.send_all()
            except BaseException as e:  # noqa: BLE001
                sender_err.append(e)

        st = threading.Thread(target=sender, name="sender", daemon=True)
        dt = threading.Thread(target=self.dispatch_all, name="dispatcher", daemon=True)
        if self.P > 1:
            st.start()
        dt.start()
        order = receive_order(self.i, self.P)
        order = [self.i] + order if eng.cfg.self_order == "first" else order + [self.i]
        for n, s in enumerate(order):
            if not self.ready[s].is_set():
                self.idle.set()
                self.ready[s].wait()
                self.idle.clear()
            if self.error is not None:
                raise self.error
            self.process_group(s)
            if n == 0:
                eng._maybe_fault(self.ordinal, "mid")
        dt.join()
        if self.P > 1:
            st.join()
        if sender_err:
            raise sender_err[0]
        if self.error is not None:
            raise self.error
        eng._io_delta(self.counters, before, self.slot_arrays)
        bad = check_traffic_bounds(self.counters, self.man, eng.cfg.force_filter is False, self.skip_ratio)
        eng._emit_metrics(self.counters, ["generate", "pass", "dispatch", "process"])
        if bad:
            if eng.cfg.strict:
                raise TrafficBoundViolation("; ".join(bad))
            for msg in bad:
                log.warning("traffic bound: %s", msg)

    def cleanup(self):
        shutil.rmtree(self.dir, ignore_errors=True)
