"""Cluster membership and framed message streams over TCP.

Every ordered pair of ranks has one long-lived connection: rank ``i``
dials every peer for its outbound stream and accepts one inbound stream from
each.  A reader thread per inbound connection hands frames to bounded
queues, so a slow consumer back-pressures the sender through TCP.

Frame header (little-endian, packed, 47 bytes)::

    magic "DFOM" 4s | version u32 | call u64 | kind u8 | src rank u32
    flags u16 | record count u64 | message_bytes u32 | payload length u64
    header crc32 u32   (over the preceding 40 bytes)
"""
from __future__ import annotations

import json
import logging
import os
import queue
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Tuple

log = logging.getLogger(__name__)

MAGIC = b"DFOM"
VERSION = 1
_HEAD = struct.Struct("<4sIQBIHQIQ")
_CRC = struct.Struct("<I")
HEADER_SIZE = _HEAD.size + _CRC.size

KIND_MESSAGES = 0
KIND_CONTROL = 1
KIND_REDUCTION = 2
KIND_JOURNAL = 3

FLAG_FILTERED = 1
FLAG_END = 2


class TransportError(RuntimeError):
    pass


class PeerFailure(TransportError):
    pass


@dataclass
class Frame:
    kind: int
    src: int
    call: int = 0
    flags: int = 0
    count: int = 0
    message_bytes: int = 0
    payload: bytes = b""

    def __post_init__(self):
        if self.kind == KIND_MESSAGES and len(self.payload) != self.count * (8 + self.message_bytes):
            raise TransportError(
                f"payload length {len(self.payload)} != {self.count} x (8 + {self.message_bytes})")

    @property
    def filtered(self) -> bool:
        return bool(self.flags & FLAG_FILTERED)

    @property
    def end(self) -> bool:
        return bool(self.flags & FLAG_END)

    def header(self) -> bytes:
        h = _HEAD.pack(MAGIC, VERSION, self.call, self.kind, self.src, self.flags, self.count,
                       self.message_bytes, len(self.payload))
        return h + _CRC.pack(zlib.crc32(h))

    def encode(self) -> bytes:
        return self.header() + bytes(self.payload)


def decode_header(buf: bytes) -> Tuple[dict, int]:
    """Parse a frame header; returns (fields, payload length)."""
    if len(buf) != HEADER_SIZE:
        raise TransportError("short frame header")
    head = buf[:_HEAD.size]
    (crc,) = _CRC.unpack(buf[_HEAD.size:])
    if zlib.crc32(head) != crc:
        raise TransportError("frame header checksum mismatch")
    magic, version, call, kind, src, flags, count, mb, plen = _HEAD.unpack(head)
    if magic != MAGIC:
        raise TransportError(f"bad frame magic {magic!r}")
    if version != VERSION:
        raise TransportError(f"unsupported frame version {version}")
    return dict(kind=kind, src=src, call=call, flags=flags, count=count, message_bytes=mb), plen


def decode_frame(buf: bytes) -> Frame:
    fields, plen = decode_header(buf[:HEADER_SIZE])
    payload = buf[HEADER_SIZE:HEADER_SIZE + plen]
    if len(payload) != plen:
        raise TransportError("truncated frame payload")
    return Frame(payload=payload, **fields)


def round_robin_targets(i: int, P: int) -> List[int]:
    """Send order of node ``i``: i+1, ..., P-1, 0, ..., i-1."""
    if not 0 <= i < P:
        raise ValueError(f"rank {i} outside [0, {P})")
    return [(i + d) % P for d in range(1, P)]


def receive_order(i: int, P: int) -> List[int]:
    """Order in which node ``i`` consumes peers: i-1, ..., 0, P-1, ..., i+1."""
    return [(i - d) % P for d in range(1, P)]


def read_hostfile(path) -> List[Tuple[str, int]]:
    eps = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            host, _, port = line.rpartition(":")
            eps.append((host, int(port)))
    return eps


@dataclass
class ClusterConfig:
    endpoints: List[Tuple[str, int]]
    rank: int
    connect_timeout: float = 30.0
    io_timeout: float = 300.0
    queue_depth: int = 8

    def __post_init__(self):
        if not 0 <= self.rank < len(self.endpoints):
            raise ValueError(f"rank {self.rank} not in cluster of {len(self.endpoints)}")
        if len(set(self.endpoints)) != len(self.endpoints):
            raise ValueError("duplicate endpoints in cluster config")

    @property
    def size(self) -> int:
        return len(self.endpoints)

    @classmethod
    def from_hostfile(cls, path, rank: Optional[int] = None, **kw) -> "ClusterConfig":
        if rank is None:
            rank = int(os.environ.get("OOCGRAPH_RANK", "0"))
        return cls(read_hostfile(path), rank, **kw)

    @classmethod
    def single(cls) -> "ClusterConfig":
        return cls([("127.0.0.1", 0)], 0)


def _recv_exact(sock, n) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise PeerFailure("connection closed by peer")
        got += k
    return bytes(buf)


_FAIL = object()


@dataclass
class TrafficCounters:
    frames_sent: Dict[int, int] = field(default_factory=dict)
    records_sent: Dict[int, int] = field(default_factory=dict)
    payload_bytes_sent: Dict[int, int] = field(default_factory=dict)
    records_received: Dict[int, int] = field(default_factory=dict)


class Transport:
    """Full-mesh framed transport for one rank."""

    def __init__(self, cfg: ClusterConfig):
        self.cfg = cfg
        self.rank = cfg.rank
        self.size = cfg.size
        self.out: Dict[int, socket.socket] = {}
        self.inb: Dict[int, socket.socket] = {}
        self.msg_q: Dict[int, queue.Queue] = {}
        self.ctl_q: Dict[int, queue.Queue] = {}
        self.send_locks: Dict[int, threading.Lock] = {}
        self.traffic = TrafficCounters()
        self._threads: List[threading.Thread] = []
        self._closing = False
        self._listener = None

    # -- setup
    def start(self):
        if self.size == 1:
            return self
        host, port = self.cfg.endpoints[self.rank]
        ls = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        ls.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        ls.bind((host, port))
        ls.listen(self.size)
        self._listener = ls
        for j in range(self.size):
            if j != self.rank:
                self.msg_q[j] = queue.Queue(maxsize=self.cfg.queue_depth)
                self.ctl_q[j] = queue.Queue()
                self.send_locks[j] = threading.Lock()
        acc = threading.Thread(target=self._accept_all, daemon=True)
        acc.start()
        deadline = time.monotonic() + self.cfg.connect_timeout
        for j in range(self.size):
            if j == self.rank:
                continue
            while True:
                try:
                    s = socket.create_connection(self.cfg.endpoints[j], timeout=self.cfg.connect_timeout)
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise TransportError(f"rank {self.rank}: peer {j} at {self.cfg.endpoints[j]} unreachable")
                    time.sleep(0.05)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.settimeout(self.cfg.io_timeout)
            s.sendall(Frame(KIND_CONTROL, self.rank, payload=b"hello").encode())
            self.out[j] = s
        acc.join(max(0.0, deadline - time.monotonic()))
        if len(self.inb) != self.size - 1:
            raise TransportError(f"rank {self.rank}: only {len(self.inb)} of {self.size - 1} peers connected")
        for j, s in self.inb.items():
            t = threading.Thread(target=self._reader, args=(j, s), daemon=True, name=f"reader-{j}")
            t.start()
            self._threads.append(t)
        return self

    def _accept_all(self):
        self._listener.settimeout(self.cfg.connect_timeout)
        try:
            while len(self.inb) < self.size - 1:
                s, _ = self._listener.accept()
                s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                s.settimeout(None)
                f = self._read_frame(s)
                if f.kind != KIND_CONTROL or f.payload != b"hello":
                    s.close()
                    continue
                self.inb[f.src] = s
        except OSError as e:
            log.error("rank %d: accept failed: %s", self.rank, e)

    @staticmethod
    def _read_frame(s) -> Frame:
        fields, plen = decode_header(_recv_exact(s, HEADER_SIZE))
        payload = _recv_exact(s, plen) if plen else b""
        return Frame(payload=payload, **fields)

    def _reader(self, peer, s):
        try:
            while True:
                f = self._read_frame(s)
                if f.kind == KIND_MESSAGES or (f.kind == KIND_CONTROL and f.end):
                    self.msg_q[peer].put(f)
                else:
                    self.ctl_q[peer].put(f)
        except Exception as e:  # noqa: BLE001 - surfaced to consumers
            if not self._closing:
                log.debug("rank %d: reader for peer %d stopped: %s", self.rank, peer, e)
            err = e if isinstance(e, TransportError) else PeerFailure(str(e))
            for q in (self.msg_q[peer], self.ctl_q[peer]):
                try:
                    q.put_nowait((_FAIL, err))
                except queue.Full:
                    # Drain one slot so the failure is always observable.
                    try:
                        q.get_nowait()
                    except queue.Empty:
                        pass
                    q.put_nowait((_FAIL, err))

    def close(self):
        self._closing = True
        for s in list(self.out.values()) + list(self.inb.values()):
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()
        if self._listener is not None:
            self._listener.close()

    # -- data plane
    def send(self, peer: int, frame: Frame):
        data = frame.encode()
        try:
            with self.send_locks[peer]:
                self.out[peer].sendall(data)
        except OSError as e:
            raise PeerFailure(f"rank {self.rank}: send to {peer} failed: {e}") from e
        if frame.kind == KIND_MESSAGES:
            t = self.traffic
            t.frames_sent[peer] = t.frames_sent.get(peer, 0) + 1
            t.records_sent[peer] = t.records_sent.get(peer, 0) + frame.count
            t.payload_bytes_sent[peer] = t.payload_bytes_sent.get(peer, 0) + len(frame.payload)

    def _get(self, q, peer):
        try:
            item = q.get(timeout=self.cfg.io_timeout)
        except queue.Empty:
            raise TransportError(f"rank {self.rank}: timed out waiting for peer {peer}") from None
        if isinstance(item, tuple) and item and item[0] is _FAIL:
            q.put(item)  # keep the failure visible to later callers
            raise PeerFailure(f"rank {self.rank}: peer {peer} failed: {item[1]}")
        return item

    def send_stream(self, peer: int, frames, call: int):
        """Send message frames in order, then the terminal control frame."""
        n = 0
        for f in frames:
            self.send(peer, f)
            n += 1
        self.send(peer, Frame(KIND_CONTROL, self.rank, call=call, flags=FLAG_END))
        return n

    def recv_stream(self, peer: int, call: int) -> Iterator[Frame]:
        """Yield message frames from ``peer`` for ``call`` until its terminal frame."""
        while True:
            f = self._get(self.msg_q[peer], peer)
            if f.call != call:
                raise TransportError(f"rank {self.rank}: frame for call {f.call} from {peer} during call {call}")
            if f.kind == KIND_CONTROL and f.end:
                return
            t = self.traffic
            t.records_received[peer] = t.records_received.get(peer, 0) + f.count
            yield f

    def send_control(self, peer: int, obj, call: int = 0, kind: int = KIND_CONTROL):
        self.send(peer, Frame(kind, self.rank, call=call, payload=json.dumps(obj).encode()))

    def recv_control(self, peer: int, call: int = 0, kind: int = KIND_CONTROL):
        f = self._get(self.ctl_q[peer], peer)
        if f.kind != kind or f.call != call:
            raise TransportError(f"rank {self.rank}: expected kind {kind} call {call} from {peer}, "
                                 f"got kind {f.kind} call {f.call}")
        return json.loads(f.payload)

    def broadcast(self, obj, call: int = 0, kind: int = KIND_CONTROL, root: int = 0):
        """Root sends ``obj`` to everyone; every rank returns it."""
        if self.size == 1:
            return obj
        if self.rank == root:
            for j in range(self.size):
                if j != root:
                    self.send_control(j, obj, call, kind)
            return obj
        return self.recv_control(root, call, kind)

    def gather(self, obj, call: int = 0, kind: int = KIND_CONTROL, root: int = 0):
        """Root returns the list of every rank's ``obj`` in rank order; others return None."""
        if self.size == 1:
            return [obj]
        if self.rank != root:
            self.send_control(root, obj, call, kind)
            return None
        return [obj if j == root else self.recv_control(j, call, kind) for j in range(self.size)]

    def reduce_sum(self, value, call: int = 0):
        """Sum of every rank's contribution, taken at rank 0 in rank order, returned everywhere.

        ``value`` may be an int, float, or Fraction.  The sum is exact; it is
        returned as a float (rounded once) when floats were contributed and
        no Fractions, as a Fraction when any rank sent one.
        """
        vals = self.gather(encode_number(value), call, KIND_REDUCTION)
        if self.rank == 0:
            nums = [decode_number(v) for v in vals]
            total = sum((Fraction(x) if isinstance(x, float) else x for x in nums), 0)
            if any(isinstance(x, float) for x in nums) and not any(isinstance(x, Fraction) for x in nums):
                total = float(total)
            out = encode_number(total)
        else:
            out = None
        return decode_number(self.broadcast(out, call, KIND_REDUCTION))

    def barrier(self, call: int = 0):
        self.reduce_sum(0, call)


def encode_number(v):
    if isinstance(v, Fraction):
        return {"n": v.numerator, "d": v.denominator}
    if isinstance(v, float):
        return {"f": v.hex()}
    return {"i": int(v)}


def decode_number(d):
    if "n" in d:
        return Fraction(d["n"], d["d"])
    if "f" in d:
        return float.fromhex(d["f"])
    return d["i"]


def free_ports(n: int, host: str = "127.0.0.1") -> List[int]:
    socks = []
    try:
        for _ in range(n):
            s = socket.socket()
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()
