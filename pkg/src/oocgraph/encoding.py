"""CSR / DCSR edge-chunk encodings and the on-disk chunk file format.

Chunk file layout, little-endian, no padding::

    magic  "DFOC"        4s
    version              u32
    form                 u8   (0 = CSR, 1 = DCSR)
    src_lo, src_hi       u64, u64
    edge_count           u64
    payload_bytes        u32
    offsets              u64[n + 1]   (n = src_hi - src_lo for CSR,
                                       number of distinct sources for DCSR)
    sources              u64[n]       (DCSR only)
    dst                  u64[edge_count]
    payload              u8[edge_count * payload_bytes]

The DCSR source count is not in the header; it follows from the file size.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .layout import ID_DTYPE

MAGIC = b"DFOC"
VERSION = 1
FORM_CSR = 0
FORM_DCSR = 1
HEADER = struct.Struct("<4sIBQQQI")

# Upper bound on edges materialized at once while iterating a chunk.
DEFAULT_WINDOW = 1 << 16


class EncodingError(ValueError):
    pass


def _empty_payload(n: int, k: int) -> np.ndarray:
    return np.zeros((n, k), dtype=np.uint8)


def _check_sorted(src: np.ndarray, dst: np.ndarray):
    if len(src) < 2:
        return
    ds = np.diff(src.astype(np.int64))
    bad = (ds < 0) | ((ds == 0) & (np.diff(dst.astype(np.int64)) < 0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0]) + 1
        raise EncodingError(f"edges not sorted by (src, dst) at record {i}")


@dataclass
class EdgeChunk:
    """Edges of one (source partition, destination batch) pair."""

    src_lo: int
    src_hi: int
    src: np.ndarray
    dst: np.ndarray
    payload: np.ndarray  # (edge_count, payload_bytes) uint8

    @classmethod
    def from_edges(cls, src_lo, src_hi, edges, payload_bytes=0):
        """Build from a list of ``(src, dst)`` or ``(src, dst, payload_bytes_obj)``."""
        src = np.array([e[0] for e in edges], dtype=ID_DTYPE)
        dst = np.array([e[1] for e in edges], dtype=ID_DTYPE)
        if payload_bytes:
            payload = np.frombuffer(b"".join(bytes(e[2]) for e in edges), dtype=np.uint8)
            payload = payload.reshape(len(edges), payload_bytes).copy()
        else:
            payload = _empty_payload(len(edges), 0)
        return cls(src_lo, src_hi, src, dst, payload)

    @property
    def edge_count(self) -> int:
        return len(self.src)

    @property
    def payload_bytes(self) -> int:
        return self.payload.shape[1]

    def validate(self):
        _check_sorted(self.src, self.dst)
        if len(self.src) and (int(self.src.min()) < self.src_lo or int(self.src.max()) >= self.src_hi):
            raise EncodingError("edge source outside declared range")

    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist()))


@dataclass
class CsrChunk:
    src_lo: int
    src_hi: int
    idx: np.ndarray  # |V_src| + 1 offsets
    dst: np.ndarray
    payload: np.ndarray

    form = FORM_CSR

    @property
    def edge_count(self) -> int:
        return len(self.dst)

    @property
    def payload_bytes(self) -> int:
        return self.payload.shape[1]

    def source_runs(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        counts = np.diff(self.idx.astype(np.int64))
        nz = np.flatnonzero(counts)
        return (nz + self.src_lo).astype(ID_DTYPE), self.idx[nz].astype(np.int64), counts[nz]

    def lookup(self, sources: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Seek each source directly: ``(start offsets, counts)``."""
        local = sources.astype(np.int64) - self.src_lo
        starts = np.asarray(self.idx[local], dtype=np.int64)
        ends = np.asarray(self.idx[local + 1], dtype=np.int64)
        return starts, ends - starts


@dataclass
class DcsrChunk:
    src_lo: int
    src_hi: int
    srcs: np.ndarray  # one entry per source with >= 1 edge
    offsets: np.ndarray  # len(srcs) + 1, last is the end sentinel
    dst: np.ndarray
    payload: np.ndarray

    form = FORM_DCSR

    @property
    def edge_count(self) -> int:
        return len(self.dst)

    @property
    def payload_bytes(self) -> int:
        return self.payload.shape[1]

    @property
    def src_idx(self):
        return list(zip(self.srcs.tolist(), self.offsets[:-1].tolist()))

    def source_runs(self):
        offs = np.asarray(self.offsets, dtype=np.int64)
        return np.asarray(self.srcs), offs[:-1], np.diff(offs)

    def lookup(self, sources: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        # Merge of two ascending sequences; absent sources get a zero count.
        srcs = self.srcs
        pos = np.searchsorted(srcs, sources)
        pos_c = np.minimum(pos, max(len(srcs) - 1, 0))
        hit = (pos < len(srcs)) & (np.asarray(srcs[pos_c]) == sources) if len(srcs) else np.zeros(len(sources), bool)
        offs = self.offsets
        starts = np.where(hit, np.asarray(offs[pos_c], dtype=np.int64), 0)
        ends = np.where(hit, np.asarray(offs[np.minimum(pos_c + 1, len(offs) - 1)], dtype=np.int64), 0)
        return starts, ends - starts


def encode_csr(chunk: EdgeChunk) -> CsrChunk:
    chunk.validate()
    nv = chunk.src_hi - chunk.src_lo
    counts = np.bincount(chunk.src.astype(np.int64) - chunk.src_lo, minlength=nv)[:nv]
    idx = np.zeros(nv + 1, dtype=ID_DTYPE)
    np.cumsum(counts, out=idx[1:])
    return CsrChunk(chunk.src_lo, chunk.src_hi, idx, chunk.dst.astype(ID_DTYPE), chunk.payload)


def encode_dcsr(chunk: EdgeChunk) -> DcsrChunk:
    chunk.validate()
    src = chunk.src.astype(ID_DTYPE)
    if len(src):
        starts = np.flatnonzero(np.r_[True, src[1:] != src[:-1]])
    else:
        starts = np.zeros(0, dtype=np.int64)
    offsets = np.append(starts, len(src)).astype(ID_DTYPE)
    return DcsrChunk(chunk.src_lo, chunk.src_hi, src[starts], offsets, chunk.dst.astype(ID_DTYPE), chunk.payload)


def decode(c) -> EdgeChunk:
    srcs, starts, counts = c.source_runs()
    src = np.repeat(np.asarray(srcs, dtype=ID_DTYPE), counts)
    return EdgeChunk(c.src_lo, c.src_hi, src, np.asarray(c.dst, dtype=ID_DTYPE), np.asarray(c.payload))


def should_build_csr(v_src: int, e: int, ratio: float = 32.0) -> bool:
    """CSR is worth building when the source range is at most ``ratio`` times the edge count."""
    if v_src < 1:
        raise EncodingError("v_src must be >= 1")
    return e > 0 and v_src <= ratio * e


def choose_read_representation(msg_count: int, v_src: int, dcsr_len: int, gamma: int = 1024,
                               csr_available: bool = True) -> str:
    """Pick "csr" or "dcsr" by estimated seek cost; ties go to CSR."""
    if not csr_available:
        return "dcsr"
    return "csr" if min(gamma * msg_count, v_src) <= 2 * dcsr_len else "dcsr"


def _expand(sources, starts, counts, window):
    """Yield ``(src per edge, edge positions)`` in windows of at most ``window`` edges."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return
    cum = np.cumsum(counts)
    if total <= window:
        owner = np.repeat(np.arange(len(counts)), counts)
        pos = starts[owner] + (np.arange(total) - (cum[owner] - counts[owner]))
        yield sources[owner], pos
        return
    for w0 in range(0, total, window):
        k = np.arange(w0, min(w0 + window, total))
        owner = np.searchsorted(cum, k, side="right")
        pos = starts[owner] + (k - (cum[owner] - counts[owner]))
        yield sources[owner], pos


def _check_ascending(sources):
    if len(sources) > 1 and np.any(np.diff(sources.astype(np.int64)) <= 0):
        raise EncodingError("source stream must be strictly ascending")


def iter_edges_for_sources(chunk, sources, window: int = DEFAULT_WINDOW) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Stream ``(src, dst, payload)`` windows for chunk edges whose source is in ``sources``.

    CSR chunks seek each source through ``idx``; DCSR chunks merge the
    source stream against their source list.  Output is in (src, dst) order.
    """
    sources = np.asarray(sources, dtype=ID_DTYPE)
    _check_ascending(sources)
    if len(sources) == 0 or chunk.edge_count == 0:
        return
    if int(sources[0]) < chunk.src_lo or int(sources[-1]) >= chunk.src_hi:
        raise EncodingError("source outside chunk source range")
    starts, counts = chunk.lookup(sources)
    for s, pos in _expand(sources, starts, counts, window):
        yield s, np.asarray(chunk.dst[pos], dtype=ID_DTYPE), np.asarray(chunk.payload[pos])


def iterate_edges_for_sources(chunk, sources):
    """List form of :func:`iter_edges_for_sources` as ``(src, dst)`` or ``(src, dst, payload)`` tuples."""
    out = []
    for s, d, p in iter_edges_for_sources(chunk, sources):
        if p.shape[1]:
            out.extend(zip(s.tolist(), d.tolist(), (bytes(r) for r in p)))
        else:
            out.extend(zip(s.tolist(), d.tolist()))
    return out


# -- files -------------------------------------------------------------------

def _header(form, src_lo, src_hi, edge_count, payload_bytes) -> bytes:
    return HEADER.pack(MAGIC, VERSION, form, src_lo, src_hi, edge_count, payload_bytes)


def write_chunk(path, c) -> int:
    """Write a CSR or DCSR chunk; returns bytes written."""
    with open(path, "wb") as f:
        f.write(_header(c.form, c.src_lo, c.src_hi, c.edge_count, c.payload_bytes))
        if c.form == FORM_CSR:
            f.write(np.ascontiguousarray(c.idx, dtype=ID_DTYPE).tobytes())
        else:
            f.write(np.ascontiguousarray(c.offsets, dtype=ID_DTYPE).tobytes())
            f.write(np.ascontiguousarray(c.srcs, dtype=ID_DTYPE).tobytes())
        f.write(np.ascontiguousarray(c.dst, dtype=ID_DTYPE).tobytes())
        f.write(np.ascontiguousarray(c.payload, dtype=np.uint8).tobytes())
        return f.tell()


def _map(path, dtype, offset, count, shape=None):
    if count == 0:
        return np.zeros(shape if shape is not None else 0, dtype=dtype)
    return np.memmap(path, dtype=dtype, mode="r", offset=offset, shape=shape if shape is not None else (count,))


def read_header(path):
    with open(path, "rb") as f:
        raw = f.read(HEADER.size)
    magic, version, form, lo, hi, e, k = HEADER.unpack(raw)
    if magic != MAGIC:
        raise EncodingError(f"{path}: bad chunk magic {magic!r}")
    if version != VERSION:
        raise EncodingError(f"{path}: unsupported chunk version {version}")
    return form, lo, hi, e, k


def read_chunk(path):
    """Open a chunk file with memory-mapped arrays (nothing is read eagerly)."""
    form, lo, hi, e, k = read_header(path)
    off = HEADER.size
    if form == FORM_CSR:
        n = hi - lo
        idx = _map(path, ID_DTYPE, off, n + 1)
        off += 8 * (n + 1)
        dst = _map(path, ID_DTYPE, off, e)
        off += 8 * e
        payload = _map(path, np.uint8, off, e * k, shape=(e, k))
        return CsrChunk(lo, hi, idx, dst, payload)
    size = os.path.getsize(path)
    n = (size - HEADER.size - 8 - 8 * e - k * e) // 16
    offsets = _map(path, ID_DTYPE, off, n + 1)
    off += 8 * (n + 1)
    srcs = _map(path, ID_DTYPE, off, n)
    off += 8 * n
    dst = _map(path, ID_DTYPE, off, e)
    off += 8 * e
    payload = _map(path, np.uint8, off, e * k, shape=(e, k))
    return DcsrChunk(lo, hi, srcs, offsets, dst, payload)


class ChunkFileWriter:
    """Streaming builder: feed sorted edge windows, then :meth:`finish`.

    Only the current window is held in memory; edges are spooled to
    temporary files and the final CSR/DCSR files are assembled by copying.
    """

    def __init__(self, src_lo, src_hi, payload_bytes, tmpdir):
        self.src_lo, self.src_hi, self.k = src_lo, src_hi, payload_bytes
        self.count = 0
        self.nsrc = 0
        self._last = None  # (src, dst) of the previous edge
        fd, self._base = tempfile.mkstemp(dir=tmpdir, prefix="chunk")
        os.close(fd)
        # Files are reopened per window so many writers can coexist without
        # exhausting descriptors.
        self._f = {name: self._base + "." + name for name in ("src", "off", "dst", "pay")}
        for p in self._f.values():
            open(p, "wb").close()

    def add(self, src, dst, payload=None):
        if len(src) == 0:
            return
        src = np.ascontiguousarray(src, dtype=ID_DTYPE)
        dst = np.ascontiguousarray(dst, dtype=ID_DTYPE)
        if int(src[0]) < self.src_lo or int(src[-1]) >= self.src_hi:
            raise EncodingError("edge source outside chunk range")
        _check_sorted(src, dst)
        new_run = np.r_[True, src[1:] != src[:-1]]
        if self._last is not None:
            ls, ld = self._last
            s0, d0 = int(src[0]), int(dst[0])
            if (s0, d0) < (ls, ld):
                raise EncodingError("edges not sorted by (src, dst) across windows")
            new_run[0] = s0 != ls
        starts = np.flatnonzero(new_run)
        _append(self._f["src"], src[starts])
        _append(self._f["off"], (starts + self.count).astype(ID_DTYPE))
        _append(self._f["dst"], dst)
        if self.k:
            _append(self._f["pay"], np.ascontiguousarray(payload, dtype=np.uint8))
        self.nsrc += len(starts)
        self.count += len(src)
        self._last = (int(src[-1]), int(dst[-1]))

    def finish(self, dcsr_path, csr_path=None, window=DEFAULT_WINDOW) -> int:
        """Write the DCSR file (and CSR if ``csr_path``); returns total bytes written."""
        b = self._base
        written = 0
        try:
            with open(dcsr_path, "wb") as out:
                out.write(_header(FORM_DCSR, self.src_lo, self.src_hi, self.count, self.k))
                _copy(b + ".off", out)
                out.write(np.array([self.count], dtype=ID_DTYPE).tobytes())
                _copy(b + ".src", out)
                _copy(b + ".dst", out)
                _copy(b + ".pay", out)
                written += out.tell()
            if csr_path is not None:
                srcs = _map(b + ".src", ID_DTYPE, 0, self.nsrc)
                offs = _map(b + ".off", ID_DTYPE, 0, self.nsrc)
                with open(csr_path, "wb") as out:
                    out.write(_header(FORM_CSR, self.src_lo, self.src_hi, self.count, self.k))
                    n = self.src_hi - self.src_lo
                    for a in range(0, n + 1, window):
                        q = np.arange(a, min(a + window, n + 1), dtype=np.int64) + self.src_lo
                        j = np.searchsorted(srcs, q.astype(ID_DTYPE), side="left")
                        vals = np.where(j < self.nsrc, np.asarray(offs[np.minimum(j, max(self.nsrc - 1, 0))]) if self.nsrc else 0, self.count)
                        out.write(np.asarray(vals, dtype=ID_DTYPE).tobytes())
                    del srcs, offs
                    _copy(b + ".dst", out)
                    _copy(b + ".pay", out)
                    written += out.tell()
        finally:
            for name in self._f:
                try:
                    os.unlink(b + "." + name)
                except FileNotFoundError:
                    pass
            try:
                os.unlink(b)
            except FileNotFoundError:
                pass
        return written

    def abort(self):
        for name in list(self._f) + [""]:
            try:
                os.unlink(self._base + ("." + name if name else ""))
            except FileNotFoundError:
                pass


def _append(path, arr):
    with open(path, "ab") as f:
        f.write(arr.tobytes())


def _copy(path, out, bufsize=1 << 20):
    with open(path, "rb") as f:
        while True:
            buf = f.read(bufsize)
            if not buf:
                break
            out.write(buf)
