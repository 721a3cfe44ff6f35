import struct
import threading
import zlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oocgraph.transport import (FLAG_END, FLAG_FILTERED, HEADER_SIZE, KIND_CONTROL, KIND_MESSAGES, ClusterConfig,
                                Frame, PeerFailure, Transport, TransportError, decode_frame, free_ports,
                                read_hostfile, receive_order, round_robin_targets)


@pytest.mark.parametrize("i,P,expected", [(0, 4, [1, 2, 3]), (2, 4, [3, 0, 1]), (0, 1, [])])
def test_round_robin(i, P, expected):
    assert round_robin_targets(i, P) == expected


@given(st.integers(1, 16), st.data())
def test_receive_order_mirrors_send_order(P, data):
    i = data.draw(st.integers(0, P - 1))
    # Node i hears from j at the step where j targets i.
    assert receive_order(i, P) == sorted((j for j in range(P) if j != i),
                                         key=lambda j: round_robin_targets(j, P).index(i))


def test_frame_golden():
    payload = struct.pack("<Qd", 3, 0.5)
    f = Frame(KIND_MESSAGES, 2, call=7, flags=FLAG_FILTERED, count=1, message_bytes=8, payload=payload)
    head = struct.pack("<4sIQBIHQIQ", b"DFOM", 1, 7, 0, 2, 1, 1, 8, 16)
    assert f.encode() == head + struct.pack("<I", zlib.crc32(head)) + payload
    assert HEADER_SIZE == 47


def test_frame_length_rule():
    assert len(Frame(KIND_MESSAGES, 0, count=5, message_bytes=8, payload=bytes(80)).payload) == 80
    with pytest.raises(TransportError):
        Frame(KIND_MESSAGES, 0, count=5, message_bytes=8, payload=bytes(79))


@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 3), st.integers(0, 2 ** 32 - 1), st.integers(0, 3),
       st.binary(max_size=64))
def test_frame_round_trip(call, kind, src, flags, blob):
    if kind == KIND_MESSAGES:
        f = Frame(kind, src, call, flags, len(blob) // 8, 0, blob[: len(blob) // 8 * 8])
    else:
        f = Frame(kind, src, call, flags, payload=blob)
    assert decode_frame(f.encode()) == f


def test_corrupt_header_rejected():
    buf = bytearray(Frame(KIND_CONTROL, 0, payload=b"x").encode())
    buf[9] ^= 1
    with pytest.raises(TransportError, match="checksum"):
        decode_frame(bytes(buf))


def test_hostfile(tmp_path):
    p = tmp_path / "hosts"
    p.write_text("# cluster\nnode-a:7000\n\n10.0.0.2:7001\n")
    assert read_hostfile(p) == [("node-a", 7000), ("10.0.0.2", 7001)]
    with pytest.raises(ValueError):
        ClusterConfig([("h", 1), ("h", 1)], 0)


def run_mesh(P, body, **kw):
    eps = [("127.0.0.1", p) for p in free_ports(P)]
    out, errs = [None] * P, []

    def target(r):
        t = Transport(ClusterConfig(eps, r, connect_timeout=10, io_timeout=10, **kw)).start()
        try:
            out[r] = body(t)
        except Exception as e:  # noqa: BLE001
            errs.append(e)
        finally:
            t.close()

    threads = [threading.Thread(target=target, args=(r,)) for r in range(P)]
    for th in threads:
        th.start()
    for th in threads:
        th.join(30)
    assert not errs, errs
    return out


def test_reduce_sum_loopback():
    assert run_mesh(4, lambda t: t.reduce_sum(t.rank + 1)) == [10] * 4
    floats = [0.1, 1e16, -1e16, 0.2]
    got = run_mesh(4, lambda t: t.reduce_sum(floats[t.rank]))
    assert got == [0.30000000000000004] * 4  # exact sum, rounded once


def test_reduce_sum_single():
    t = Transport(ClusterConfig.single()).start()
    assert t.reduce_sum(2.5) == 2.5


def test_streams_loopback():
    def body(t):
        peer = 1 - t.rank
        if t.rank == 0:
            frames = [Frame(KIND_MESSAGES, 0, 3, 0, 1, 0, struct.pack("<Q", v)) for v in (1, 2, 3)]
            t.send_stream(peer, frames, call=3)
            t.send_stream(peer, [], call=4)
            return None
        a = [struct.unpack("<Q", f.payload)[0] for f in t.recv_stream(peer, 3)]
        b = list(t.recv_stream(peer, 4))
        return a, b

    assert run_mesh(2, body)[1] == ([1, 2, 3], [])


def test_peer_failure_surfaces():
    eps = [("127.0.0.1", p) for p in free_ports(2)]
    res = {}

    def r0():
        t = Transport(ClusterConfig(eps, 0, connect_timeout=10, io_timeout=10)).start()
        t.close()

    def r1():
        t = Transport(ClusterConfig(eps, 1, connect_timeout=10, io_timeout=10)).start()
        try:
            list(t.recv_stream(0, 1))
        except PeerFailure as e:
            res["err"] = e
        t.close()

    ths = [threading.Thread(target=f) for f in (r0, r1)]
    for th in ths:
        th.start()
    for th in ths:
        th.join(30)
    assert "err" in res


def test_unreachable_peer():
    eps = [("127.0.0.1", p) for p in free_ports(2)]
    with pytest.raises(TransportError, match="unreachable"):
        Transport(ClusterConfig(eps, 0, connect_timeout=0.5)).start()
