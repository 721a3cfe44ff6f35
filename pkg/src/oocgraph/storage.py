"""Batch-granular on-disk vertex arrays with copy-on-write checkpoints.

Each vertex array of a node lives in two files:

``<name>.blk``
    raw block bytes; every block starts on a 4 KiB boundary.  Committed
    blocks are never rewritten.
``<name>.lin``
    lineage log of length-prefixed records (``u32 length, u32 crc32,
    JSON payload``): one ``meta`` record, then ``commit`` records listing the
    block of every batch for a checkpoint, and ``drop`` records.

The node's run journal (``journal.log``) uses the same record framing.
"""
from __future__ import annotations

import bisect
import hashlib
import json
import logging
import os
import struct
import threading
import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

log = logging.getLogger(__name__)

ALIGN = 4096
RECORD = struct.Struct("<II")
BITMAP = "bitmap"


class StorageError(RuntimeError):
    pass


class StateError(StorageError):
    """Operation not allowed in the current call state."""


class RecoveryError(StorageError):
    pass


def _align(n: int) -> int:
    return -(-n // ALIGN) * ALIGN


def digest(buf) -> str:
    return hashlib.blake2b(memoryview(buf), digest_size=16).hexdigest()


# -- record framing ----------------------------------------------------------

def append_record(f, obj: dict, durable: bool = False):
    payload = json.dumps(obj, separators=(",", ":")).encode()
    f.write(RECORD.pack(len(payload), zlib.crc32(payload)) + payload)
    f.flush()
    if durable:
        os.fsync(f.fileno())


def read_records(path) -> List[dict]:
    """Read all intact records; a torn or corrupt tail is ignored."""
    out = []
    if not os.path.exists(path):
        return out
    with open(path, "rb") as f:
        data = f.read()
    pos = 0
    while pos + RECORD.size <= len(data):
        n, crc = RECORD.unpack_from(data, pos)
        body = data[pos + RECORD.size: pos + RECORD.size + n]
        if len(body) < n or zlib.crc32(body) != crc:
            log.warning("%s: ignoring torn record at byte %d", path, pos)
            break
        out.append(json.loads(body))
        pos += RECORD.size + n
    return out


def write_records(path, records: List[dict], durable: bool = False):
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        for r in records:
            append_record(f, r)
        if durable:
            os.fsync(f.fileno())
    os.replace(tmp, path)


# -- free-space management ---------------------------------------------------

class ExtentAllocator:
    """First-fit allocator over a file's aligned byte range."""

    def __init__(self, end: int = 0):
        self.end = end
        self.free: List[Tuple[int, int]] = []  # sorted (offset, size)

    def allocate(self, length: int) -> int:
        size = _align(max(length, 1))
        for i, (off, sz) in enumerate(self.free):
            if sz >= size:
                if sz == size:
                    self.free.pop(i)
                else:
                    self.free[i] = (off + size, sz - size)
                return off
        off = self.end
        self.end += size
        return off

    def release(self, off: int, length: int):
        size = _align(max(length, 1))
        i = bisect.bisect_left(self.free, (off, 0))
        self.free.insert(i, (off, size))
        # coalesce with neighbours
        if i + 1 < len(self.free) and off + size == self.free[i + 1][0]:
            self.free[i] = (off, size + self.free[i + 1][1])
            self.free.pop(i + 1)
        if i > 0 and self.free[i - 1][0] + self.free[i - 1][1] == off:
            po, ps = self.free[i - 1]
            self.free[i - 1] = (po, ps + self.free[i][1])
            self.free.pop(i)
        if self.free and self.free[-1][0] + self.free[-1][1] == self.end:
            self.end = self.free.pop()[0]

    @classmethod
    def from_used(cls, used: List[Tuple[int, int]]) -> "ExtentAllocator":
        a = cls(0)
        pos = 0
        for off, length in sorted(used):
            if off > pos:
                a.free.append((pos, off - pos))
            pos = max(pos, off + _align(max(length, 1)))
        a.end = pos
        return a


@dataclass
class Block:
    offset: int
    length: int
    digest: str
    refs: int = 0


class BlockStore:
    """Append-only block file with a block table and reference counts."""

    def __init__(self, path: str, durable: bool = False):
        self.path = path
        self.durable = durable
        self.blocks: Dict[int, Block] = {}
        self.next_id = 0
        self.alloc = ExtentAllocator()
        self._lock = threading.Lock()
        if not os.path.exists(path):
            open(path, "wb").close()
        self._fd = os.open(path, os.O_RDWR)

    def close(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def put(self, data: bytes) -> int:
        dg = digest(data)
        with self._lock:
            off = self.alloc.allocate(len(data))
            bid = self.next_id
            self.next_id += 1
            self.blocks[bid] = Block(off, len(data), dg)
        os.pwrite(self._fd, data, off)
        return bid

    def overwrite(self, bid: int, data: bytes):
        blk = self.blocks[bid]
        if len(data) != blk.length:
            raise StorageError("block length mismatch")
        os.pwrite(self._fd, data, blk.offset)
        blk.digest = digest(data)

    def get(self, bid: int, verify: bool = True) -> bytes:
        blk = self.blocks[bid]
        data = os.pread(self._fd, blk.length, blk.offset)
        if len(data) != blk.length:
            raise StorageError(f"{self.path}: short read of block {bid}")
        if verify and digest(data) != blk.digest:
            raise StorageError(f"{self.path}: checksum mismatch in block {bid}")
        return data

    def incref(self, bid: int):
        self.blocks[bid].refs += 1

    def decref(self, bid: int):
        blk = self.blocks[bid]
        blk.refs -= 1
        if blk.refs <= 0:
            self.reclaim(bid)

    def reclaim(self, bid: int):
        with self._lock:
            blk = self.blocks.pop(bid)
            self.alloc.release(blk.offset, blk.length)

    def trim(self):
        """Give trailing free space back to the file system."""
        if os.fstat(self._fd).st_size > self.alloc.end:
            os.ftruncate(self._fd, self.alloc.end)

    def sync(self):
        if self.durable:
            os.fsync(self._fd)

    def live_bytes(self) -> int:
        return sum(b.length for b in self.blocks.values())


# -- vertex arrays -----------------------------------------------------------

Init = Union[int, float, bool, Callable[[np.ndarray], np.ndarray], None]


class VertexArray:
    """Per-node storage of one typed vertex array, one block per batch.

    ``dtype`` is a numpy dtype or ``"bitmap"`` for boolean arrays stored at
    one bit per vertex.
    """

    def __init__(self, directory: str, name: str, dtype, batches: List[Tuple[int, int]],
                 checkpointing: bool = True, keep: int = 2, durable: bool = False):
        self.name = name
        self.is_bitmap = dtype == BITMAP if isinstance(dtype, str) and dtype == BITMAP else np.dtype(dtype) == np.bool_
        self.dtype = np.dtype(bool) if self.is_bitmap else np.dtype(dtype)
        self.batches = list(batches)
        self.checkpointing = checkpointing
        self.keep = keep
        self.durable = durable
        self.dir = directory
        self.blk_path = os.path.join(directory, name + ".blk")
        self.lin_path = os.path.join(directory, name + ".lin")
        self.store: Optional[BlockStore] = None
        self.checkpoints: Dict[int, List[int]] = {}  # ordinal -> block id per batch
        self.current: List[int] = []
        self.pending: Dict[int, int] = {}
        self.call_open = False
        self.bytes_read = 0
        self.bytes_written = 0

    # sizes
    @property
    def element_bytes(self) -> int:
        return 1 if self.is_bitmap else self.dtype.itemsize

    def block_length(self, b: int) -> int:
        lo, hi = self.batches[b]
        return -(-(hi - lo) // 8) if self.is_bitmap else (hi - lo) * self.dtype.itemsize

    def memory_bytes(self, b: int) -> int:
        """Bytes of the unpacked in-memory view of batch ``b``."""
        lo, hi = self.batches[b]
        return (hi - lo) * self.dtype.itemsize + self.block_length(b)

    def _encode(self, arr: np.ndarray, b: int) -> bytes:
        lo, hi = self.batches[b]
        arr = np.asarray(arr)
        if arr.shape != (hi - lo,):
            raise StorageError(f"{self.name}: batch {b} expects {hi - lo} values, got {arr.shape}")
        if self.is_bitmap:
            return np.packbits(arr.astype(bool), bitorder="little").tobytes()
        return np.ascontiguousarray(arr, dtype=self.dtype.newbyteorder("<")).tobytes()

    def _decode(self, data: bytes, b: int) -> np.ndarray:
        lo, hi = self.batches[b]
        if self.is_bitmap:
            bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little", count=hi - lo)
            return bits.astype(bool)
        return np.frombuffer(data, dtype=self.dtype.newbyteorder("<")).astype(self.dtype, copy=True)

    # lifecycle
    def _meta_record(self) -> dict:
        return {"t": "meta", "name": self.name, "dtype": BITMAP if self.is_bitmap else self.dtype.str,
                "batches": self.batches}

    def _commit_record(self, ordinal: int, ids: List[int]) -> dict:
        bl = self.store.blocks
        return {"t": "commit", "ckpt": ordinal,
                "blocks": [[i, bl[i].offset, bl[i].length, bl[i].digest] for i in ids]}

    def create(self, init: Init, ordinal: int = 0):
        """Materialize every batch from ``init`` and commit the initial checkpoint."""
        for p in (self.blk_path, self.lin_path):
            if os.path.exists(p):
                os.unlink(p)
        self.store = BlockStore(self.blk_path, self.durable)
        self.current = []
        for b, (lo, hi) in enumerate(self.batches):
            vids = np.arange(lo, hi, dtype=np.uint64)
            if callable(init):
                vals = np.asarray(init(vids))
                if vals.shape == ():
                    vals = np.full(hi - lo, vals, dtype=self.dtype)
            else:
                vals = np.full(hi - lo, 0 if init is None else init, dtype=self.dtype)
            bid = self.store.put(self._encode(vals, b))
            self.store.incref(bid)
            self.current.append(bid)
            self.bytes_written += self.block_length(b)
        self.store.sync()
        if self.checkpointing:
            self.checkpoints = {ordinal: list(self.current)}
            with open(self.lin_path, "ab") as f:
                append_record(f, self._meta_record())
                append_record(f, self._commit_record(ordinal, self.current), self.durable)
        return self

    def open_at(self, target: int):
        """Restore the newest checkpoint with ordinal <= ``target``; later lineage is discarded."""
        recs = read_records(self.lin_path)
        if not recs or recs[0].get("t") != "meta":
            raise RecoveryError(f"vertex array {self.name!r}: missing lineage")
        meta = recs[0]
        if [list(x) for x in meta["batches"]] != [list(x) for x in self.batches]:
            raise RecoveryError(f"vertex array {self.name!r}: batch layout differs from lineage")
        commits: Dict[int, list] = {}
        for r in recs[1:]:
            if r["t"] == "commit":
                commits[r["ckpt"]] = r["blocks"]
            elif r["t"] == "drop":
                commits.pop(r["ckpt"], None)
        kept = {c: v for c, v in commits.items() if c <= target}
        if not kept:
            raise RecoveryError(f"vertex array {self.name!r}: no checkpoint at or before call {target}")
        self.store = BlockStore(self.blk_path, self.durable)
        used = {}
        for blocks in kept.values():
            for bid, off, length, dg in blocks:
                used[bid] = Block(off, length, dg)
        self.store.blocks = used
        self.store.next_id = max(used) + 1 if used else 0
        for c in commits:
            for bid, *_ in commits[c]:
                self.store.next_id = max(self.store.next_id, bid + 1)
        self.store.alloc = ExtentAllocator.from_used([(b.offset, b.length) for b in used.values()])
        self.checkpoints = {c: [x[0] for x in kept[c]] for c in sorted(kept)}
        for ids in self.checkpoints.values():
            for bid in ids:
                self.store.incref(bid)
        self.current = list(self.checkpoints[max(self.checkpoints)])
        self.pending = {}
        write_records(self.lin_path, [meta] + [self._commit_record(c, ids) for c, ids in self.checkpoints.items()],
                      self.durable)
        self.store.trim()
        return self

    def close(self):
        if self.store is not None:
            self.store.close()

    # access
    def read_batch(self, b: int) -> np.ndarray:
        bid = self.pending.get(b, self.current[b])
        data = self.store.get(bid)
        self.bytes_read += len(data)
        return self._decode(data, b)

    def read_all(self) -> np.ndarray:
        if not self.batches:
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate([self.read_batch(b) for b in range(len(self.batches))])

    def write_batch_cow(self, b: int, values: np.ndarray) -> int:
        """Write batch ``b`` for the open call; returns the block ID now holding it."""
        if not self.call_open:
            raise StateError(f"vertex array {self.name!r}: write outside an open Process call")
        data = self._encode(values, b)
        self.bytes_written += len(data)
        if not self.checkpointing:
            bid = self.current[b]
            self.store.overwrite(bid, data)
            return bid
        if b in self.pending:
            bid = self.pending[b]
            self.store.overwrite(bid, data)
            return bid
        bid = self.store.put(data)
        self.pending[b] = bid
        return bid

    def is_dirty(self, b: int, values: np.ndarray) -> bool:
        bid = self.pending.get(b, self.current[b])
        return digest(self._encode(values, b)) != self.store.blocks[bid].digest

    # call protocol
    def begin_call(self):
        self.call_open = True

    def flush(self):
        self.store.sync()

    def commit(self, ordinal: int) -> Optional[int]:
        """Turn pending blocks into checkpoint ``ordinal``; returns it, or None if untouched."""
        self.call_open = False
        if not self.checkpointing or not self.pending:
            self.pending = {}
            return None
        self.store.sync()
        new = list(self.current)
        for b, bid in self.pending.items():
            new[b] = bid
        for bid in new:
            self.store.incref(bid)
        self.checkpoints[ordinal] = new
        self.current = new
        self.pending = {}
        with open(self.lin_path, "ab") as f:
            append_record(f, self._commit_record(ordinal, new), self.durable)
        return ordinal

    def abort(self):
        """Discard uncommitted blocks of the open call."""
        for bid in self.pending.values():
            self.store.reclaim(bid)
        self.pending = {}
        self.call_open = False

    def gc(self, keep: Optional[int] = None, upto: Optional[int] = None) -> List[int]:
        """Release all but the newest ``keep`` checkpoints (among those <= ``upto``)."""
        if not self.checkpointing:
            return []
        keep = self.keep if keep is None else keep
        eligible = sorted(c for c in self.checkpoints if upto is None or c <= upto)
        drop = eligible[:-keep] if keep > 0 else eligible
        if not drop:
            return []
        with open(self.lin_path, "ab") as f:
            for c in drop:
                for bid in self.checkpoints.pop(c):
                    self.store.decref(bid)
                append_record(f, {"t": "drop", "ckpt": c})
        self.store.trim()
        return drop

    def refcount(self, bid: int) -> int:
        blk = self.store.blocks.get(bid)
        return 0 if blk is None else blk.refs


# -- journal -----------------------------------------------------------------

def encode_value(v):
    if isinstance(v, float):
        return {"f": v.hex()}
    return {"i": int(v)}


def decode_value(d):
    return float.fromhex(d["f"]) if "f" in d else int(d["i"])


class RunJournal:
    """Ordered log of completed Process calls."""

    def __init__(self, path: str, durable: bool = False):
        self.path = path
        self.durable = durable
        self.records = read_records(path)
        for a, b in zip(self.records, self.records[1:]):
            if b["ordinal"] <= a["ordinal"]:
                raise RecoveryError(f"{path}: journal ordinals not increasing")

    @property
    def last_ordinal(self) -> int:
        return self.records[-1]["ordinal"] if self.records else 0

    def append(self, ordinal: int, kind: str, arrays: Dict[str, int], value):
        if ordinal <= self.last_ordinal:
            raise StateError(f"journal ordinal {ordinal} not after {self.last_ordinal}")
        rec = {"ordinal": ordinal, "kind": kind, "arrays": arrays, "value": encode_value(value)}
        with open(self.path, "ab") as f:
            append_record(f, rec, self.durable)
        self.records.append(rec)
        return rec

    def replace(self, records: List[dict]):
        write_records(self.path, records, self.durable)
        self.records = list(records)

    def value_of(self, ordinal: int):
        for r in self.records:
            if r["ordinal"] == ordinal:
                return decode_value(r["value"])
        raise KeyError(ordinal)
