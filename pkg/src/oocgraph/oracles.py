"""In-memory reference implementations used to check engine output."""
from __future__ import annotations

import heapq
from collections import deque

import numpy as np

UNREACHED = np.iinfo(np.uint64).max


def _adjacency(src, dst, n):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.argsort(src, kind="stable")
    start = np.zeros(n + 1, dtype=np.int64)
    np.add.at(start, src + 1, 1)
    return np.cumsum(start), dst[order], order


def pagerank_oracle(src, dst, n: int, iters: int = 5, damping: float = 0.85) -> np.ndarray:
    """Power iteration with uniform redistribution of dangling mass."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    outdeg = np.bincount(src, minlength=n).astype(np.float64)
    rank = np.full(n, 1.0 / n)
    dangling = outdeg == 0
    for _ in range(iters):
        contrib = np.where(dangling, 0.0, rank / np.where(dangling, 1.0, outdeg))
        acc = np.bincount(dst, weights=contrib[src], minlength=n)
        rank = (1.0 - damping) / n + damping * (acc + rank[dangling].sum() / n)
    return rank


def pagerank_dense(src, dst, n: int, iters: int = 5, damping: float = 0.85) -> np.ndarray:
    """Same iteration through an explicit ``n x n`` transition matrix (small graphs)."""
    M = np.zeros((n, n))
    outdeg = np.bincount(np.asarray(src, dtype=np.int64), minlength=n)
    for s, d in zip(np.asarray(src).tolist(), np.asarray(dst).tolist()):
        M[d, s] += 1.0 / outdeg[s]
    M[:, outdeg == 0] = 1.0 / n
    r = np.full(n, 1.0 / n)
    for _ in range(iters):
        r = (1.0 - damping) / n + damping * (M @ r)
    return r


def bfs_oracle(src, dst, n: int, source: int) -> np.ndarray:
    start, adj, _ = _adjacency(src, dst, n)
    level = np.full(n, UNREACHED, dtype=np.uint64)
    level[source] = 0
    q = deque([source])
    while q:
        u = q.popleft()
        for v in adj[start[u]:start[u + 1]].tolist():
            if level[v] == UNREACHED:
                level[v] = level[u] + np.uint64(1)
                q.append(v)
    return level


def wcc_oracle(src, dst, n: int) -> np.ndarray:
    """Union-find; every vertex is labeled with the smallest ID in its component."""
    parent = list(range(n))

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for a, b in zip(np.asarray(src).tolist(), np.asarray(dst).tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    return np.array([find(v) for v in range(n)], dtype=np.uint64)


def sssp_oracle(src, dst, weights, n: int, source: int) -> np.ndarray:
    """Dijkstra over float32 weights with float64 path sums."""
    start, adj, order = _adjacency(src, dst, n)
    w = np.asarray(weights, dtype=np.float32)[order].astype(np.float64)
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    done = np.zeros(n, dtype=bool)
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for k in range(start[u], start[u + 1]):
            v = int(adj[k])
            nd = d + w[k]
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def run_oracle(name: str, src, dst, payload, n: int, params: dict) -> np.ndarray:
    if name == "pr":
        return pagerank_oracle(src, dst, n, params.get("iters", 5), params.get("damping", 0.85))
    if name == "bfs":
        return bfs_oracle(src, dst, n, params.get("source", 0))
    if name == "wcc":
        return wcc_oracle(src, dst, n)
    if name == "sssp":
        w = np.ascontiguousarray(payload).view("<f4").reshape(-1)
        return sssp_oracle(src, dst, w, n, params.get("source", 0))
    raise ValueError(f"no oracle for {name!r}")


def compare(name: str, got: np.ndarray, want: np.ndarray, rtol: float = 1e-9):
    """Return ``None`` on a match, else a message naming the first differing vertex."""
    if got.shape != want.shape:
        return f"length {len(got)} != expected {len(want)}"
    if name == "pr":
        bad = np.abs(got - want) > rtol * np.abs(want)
    else:
        bad = got != want
    if bad.any():
        v = int(np.flatnonzero(bad)[0])
        return f"vertex {v}: got {got[v]!r}, expected {want[v]!r} ({int(bad.sum())} mismatches)"
    return None
