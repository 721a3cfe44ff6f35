"""Binary edge files and an external merge sort for them.

Record layout (little-endian): ``src u64, dst u64, payload[payload_bytes]``.
"""
from __future__ import annotations

import os
import tempfile
from typing import Iterator, List, Optional

import numpy as np


def record_dtype(payload_bytes: int) -> np.dtype:
    fields = [("src", "<u8"), ("dst", "<u8")]
    if payload_bytes:
        fields.append(("payload", "u1", (payload_bytes,)))
    return np.dtype(fields)


def pack_records(src, dst, payload=None, payload_bytes: int = 0) -> np.ndarray:
    rec = np.empty(len(src), dtype=record_dtype(payload_bytes))
    rec["src"] = src
    rec["dst"] = dst
    if payload_bytes:
        rec["payload"] = np.asarray(payload, dtype=np.uint8).reshape(len(src), payload_bytes)
    return rec


def write_edge_file(path, src, dst, payload=None, payload_bytes: int = 0):
    pack_records(src, dst, payload, payload_bytes).tofile(path)


def weights_to_payload(weights) -> np.ndarray:
    """4-byte float32 edge weights as an ``(E, 4)`` payload array."""
    return np.ascontiguousarray(weights, dtype="<f4").view(np.uint8).reshape(-1, 4)


def count_records(path, payload_bytes: int) -> int:
    size = os.path.getsize(path)
    rs = record_dtype(payload_bytes).itemsize
    if size % rs:
        raise ValueError(f"{path}: size {size} is not a multiple of record size {rs}")
    return size // rs


def open_edges(path, payload_bytes: int) -> np.ndarray:
    n = count_records(path, payload_bytes)
    if n == 0:
        return np.zeros(0, dtype=record_dtype(payload_bytes))
    return np.memmap(path, dtype=record_dtype(payload_bytes), mode="r", shape=(n,))


def iter_windows(path, payload_bytes: int, window: int) -> Iterator[tuple]:
    """Yield ``(first ordinal, records)`` windows read sequentially from ``path``."""
    mm = open_edges(path, payload_bytes)
    for a in range(0, len(mm), window):
        yield a, np.array(mm[a:a + window])
    del mm


def payload_of(rec: np.ndarray, payload_bytes: int) -> np.ndarray:
    if payload_bytes:
        return rec["payload"]
    return np.zeros((len(rec), 0), dtype=np.uint8)


def _sort_key(rec, by):
    a, b = ("src", "dst") if by == "src" else ("dst", "src")
    return np.lexsort((rec[b], rec[a]))


def _le(rec, key_a, key_b, by):
    """Mask of records whose sort key is <= (key_a, key_b)."""
    a, b = ("src", "dst") if by == "src" else ("dst", "src")
    ra, rb = rec[a], rec[b]
    return (ra < key_a) | ((ra == key_a) & (rb <= key_b))


def external_sort(in_path, out_path, payload_bytes: int = 0, memory_budget: int = 64 << 20,
                  by: str = "src", swap: bool = False, tmpdir: Optional[str] = None) -> int:
    """Sort an edge file by ``(src, dst)`` (or ``(dst, src)``) within a memory budget.

    With ``swap=True`` source and destination are exchanged first, which is
    how the reversed graph is produced.  Runs are sorted in memory, spilled,
    then merged blockwise: each step emits every buffered record no larger
    than the smallest buffered run tail.  Returns the record count.
    """
    dt = record_dtype(payload_bytes)
    run_len = max(1024, memory_budget // (4 * dt.itemsize))
    tmpdir = tmpdir or os.path.dirname(os.path.abspath(out_path))
    runs: List[str] = []
    total = 0
    try:
        for _, rec in iter_windows(in_path, payload_bytes, run_len):
            if swap:
                rec["src"], rec["dst"] = rec["dst"].copy(), rec["src"].copy()
            rec = rec[_sort_key(rec, by)]
            fd, name = tempfile.mkstemp(dir=tmpdir, prefix="run")
            os.close(fd)
            rec.tofile(name)
            runs.append(name)
            total += len(rec)
        if len(runs) <= 1:
            if runs:
                os.replace(runs.pop(), out_path)
            else:
                open(out_path, "wb").close()
            return total
        _merge_runs(runs, out_path, dt, by, max(256, run_len // (2 * len(runs))))
        return total
    finally:
        for r in runs:
            try:
                os.unlink(r)
            except FileNotFoundError:
                pass


def _merge_runs(runs, out_path, dt, by, buf_len):
    maps = [np.memmap(r, dtype=dt, mode="r") for r in runs]
    pos = [0] * len(maps)
    bufs = [np.zeros(0, dtype=dt) for _ in maps]
    a, b = ("src", "dst") if by == "src" else ("dst", "src")
    with open(out_path, "wb") as out:
        while True:
            for i, mm in enumerate(maps):
                if len(bufs[i]) == 0 and pos[i] < len(mm):
                    bufs[i] = np.array(mm[pos[i]:pos[i] + buf_len])
                    pos[i] += len(bufs[i])
            live = [i for i in range(len(maps)) if len(bufs[i])]
            if not live:
                break
            # Bound: smallest tail among runs that still have unread data.
            tails = [(int(bufs[i][-1][a]), int(bufs[i][-1][b])) for i in live if pos[i] < len(maps[i])]
            if tails:
                ka, kb = min(tails)
                parts = []
                for i in live:
                    m = _le(bufs[i], ka, kb, by)
                    n = int(m.sum())  # sorted, so the mask is a prefix
                    parts.append(bufs[i][:n])
                    bufs[i] = bufs[i][n:]
            else:
                parts = [bufs[i] for i in live]
                for i in live:
                    bufs[i] = np.zeros(0, dtype=dt)
            merged = np.concatenate(parts)
            merged[_sort_key(merged, by)].tofile(out)
    del maps
