"""PR, BFS, WCC and SSSP written against the public engine API.

Each driver is a plain sequence of Process calls and doubles as a usage
example: vectorized ``signal``/``slot``/``work`` functions over batch views.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .runtime import Engine, EngineError
from .storage import BITMAP, VertexArray

UNREACHED = np.iinfo(np.uint64).max


class AlgorithmError(ValueError):
    pass


class NegativeWeightError(EngineError):
    pass


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    payload: str  # "none" or "f32"
    params: Tuple[str, ...]
    output: str
    dtype: str


ALGORITHMS: Dict[str, AlgorithmSpec] = {
    "pr": AlgorithmSpec("pr", "none", ("iters", "damping"), "rank", "<f8"),
    "bfs": AlgorithmSpec("bfs", "none", ("source",), "level", "<u8"),
    "wcc": AlgorithmSpec("wcc", "none", (), "label", "<u8"),
    "sssp": AlgorithmSpec("sssp", "f32", ("source",), "dist", "<f8"),
}

DEFAULTS = {"iters": 5, "damping": 0.85, "source": 0}


def resolve_params(name: str, params: dict, num_vertices: int, payload_bytes: int, has_reversed: bool) -> dict:
    """Fill defaults and validate before any Process call runs."""
    if name not in ALGORITHMS:
        raise AlgorithmError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}")
    spec = ALGORITHMS[name]
    extra = set(params) - set(spec.params)
    if extra:
        raise AlgorithmError(f"{name}: unexpected parameters {sorted(extra)}")
    out = {k: params.get(k, DEFAULTS[k]) for k in spec.params}
    if "iters" in out and (int(out["iters"]) != out["iters"] or out["iters"] < 1):
        raise AlgorithmError("iters must be an integer >= 1")
    if "damping" in out and not 0 < out["damping"] < 1:
        raise AlgorithmError("damping must be in (0, 1)")
    if "source" in out and not 0 <= int(out["source"]) < num_vertices:
        raise AlgorithmError(f"source {out['source']} outside [0, {num_vertices})")
    if spec.payload == "f32" and payload_bytes != 4:
        raise AlgorithmError(f"{name} needs 4-byte float edge weights; graph has {payload_bytes}-byte payloads")
    if name == "wcc" and not has_reversed:
        raise AlgorithmError("wcc needs the reversed graph; preprocess with --reversed")
    return out


def _local(ctx, dst) -> np.ndarray:
    return (dst - np.uint64(ctx.lo)).astype(np.int64)


def weights_of(data: np.ndarray) -> np.ndarray:
    """View an ``(n, 4)`` uint8 payload as float32 weights."""
    return np.ascontiguousarray(data).view("<f4").reshape(-1)


# -- PageRank ----------------------------------------------------------------

# Contributions travel as integers in units of 2^-62.  Integer addition is
# associative, so accumulated ranks do not depend on message arrival order
# (and hence not on the partition count); rounding costs < 2^-63 per edge.
FIXED_SCALE = float(1 << 62)


def to_fixed(x: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(x, dtype=np.float64) * FIXED_SCALE).astype(np.int64)


def from_fixed(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.int64).astype(np.float64) / FIXED_SCALE


def pagerank(eng: Engine, iters: int = 5, damping: float = 0.85, prefix: str = "pr_") -> VertexArray:
    V = eng.num_vertices
    rank = eng.vertex_array(prefix + "rank", "<f8", init=1.0 / V)
    acc = eng.vertex_array(prefix + "acc", "<i8", init=0)
    contrib = eng.vertex_array(prefix + "contrib", "<i8", init=0)
    deg = eng.degree_array("out")

    def prepare(ctx):
        r, d, c = ctx[rank], ctx[deg], ctx[contrib]
        has = d > 0
        c[:] = 0
        c[has] = to_fixed(r[has] / d[has])
        ctx[acc][:] = 0
        return r[~has]  # dangling mass, summed exactly

    def signal(ctx):
        return ctx[contrib][ctx.local]

    def slot(ctx, msg, src, dst, data):
        np.add.at(ctx[acc], _local(ctx, dst), msg)

    for _ in range(iters):
        dangling = eng.process_vertices(prepare, [rank, deg, contrib, acc], reduce="float")
        eng.process_edges(signal, slot, [contrib], [acc], message_dtype="<i8")
        base = (1.0 - damping) / V
        spread = dangling / V

        def apply(ctx):
            ctx[rank][:] = base + damping * (from_fixed(ctx[acc]) + spread)

        eng.process_vertices(apply, [rank, acc])
    return rank


# -- BFS -----------------------------------------------------------------------

def bfs(eng: Engine, source: int = 0, prefix: str = "bfs_") -> VertexArray:
    src = np.uint64(source)
    level = eng.vertex_array(prefix + "level", "<u8",
                             init=lambda v: np.where(v == src, 0, UNREACHED).astype(np.uint64))
    active = eng.vertex_array(prefix + "active", BITMAP, init=lambda v: v == src)

    def signal(ctx):
        return ctx[level][ctx.local]

    def slot(ctx, msg, s, dst, data):
        lv = ctx[level]
        loc = _local(ctx, dst)
        new = lv[loc] == UNREACHED
        if not new.any():
            return 0
        loc = loc[new]
        lv[loc] = msg[new] + np.uint64(1)
        return len(np.unique(loc))

    depth = 0
    while eng.process_edges(signal, slot, [level], [level], active=active, message_dtype="<u8") > 0:
        depth += 1
        d = np.uint64(depth)

        def advance(ctx):
            ctx[active][:] = ctx[level] == d

        eng.process_vertices(advance, [level, active])
    return level


# -- WCC -----------------------------------------------------------------------

def wcc(eng: Engine, prefix: str = "wcc_") -> VertexArray:
    eng.reversed_manifest()
    label = eng.vertex_array(prefix + "label", "<u8", init=lambda v: v)
    prev = eng.vertex_array(prefix + "prev", "<u8", init=lambda v: v)
    active = eng.vertex_array(prefix + "active", BITMAP, init=True)

    def signal(ctx):
        return ctx[label][ctx.local]

    def slot(ctx, msg, s, dst, data):
        np.minimum.at(ctx[label], _local(ctx, dst), msg)

    def settle(ctx):
        lab, pv = ctx[label], ctx[prev]
        changed = lab != pv
        ctx[active][:] = changed
        pv[:] = lab
        return int(changed.sum())

    while True:
        for graph in ("forward", "reversed"):
            eng.process_edges(signal, slot, [label], [label], active=active, message_dtype="<u8", graph=graph)
        if eng.process_vertices(settle, [label, prev, active]) == 0:
            return label


# -- SSSP ----------------------------------------------------------------------

def sssp(eng: Engine, source: int = 0, prefix: str = "sssp_") -> VertexArray:
    src = np.uint64(source)
    start = lambda v: np.where(v == src, 0.0, np.inf)  # noqa: E731
    dist = eng.vertex_array(prefix + "dist", "<f8", init=start)
    prev = eng.vertex_array(prefix + "prev", "<f8", init=start)
    active = eng.vertex_array(prefix + "active", BITMAP, init=lambda v: v == src)

    def signal(ctx):
        return ctx[dist][ctx.local]

    def slot(ctx, msg, s, dst, data):
        w = weights_of(data)
        if not (w >= 0).all():
            k = int(np.flatnonzero(~(w >= 0))[0])
            raise NegativeWeightError(f"edge {int(s[k])}->{int(dst[k])} has weight {w[k]}")
        np.minimum.at(ctx[dist], _local(ctx, dst), msg + w.astype(np.float64))

    def settle(ctx):
        d, pv = ctx[dist], ctx[prev]
        improved = d < pv
        ctx[active][:] = improved
        pv[:] = d
        return int(improved.sum())

    while True:
        eng.process_edges(signal, slot, [dist], [dist], active=active, message_dtype="<f8")
        if eng.process_vertices(settle, [dist, prev, active]) == 0:
            return dist


DRIVERS = {"pr": pagerank, "bfs": bfs, "wcc": wcc, "sssp": sssp}


def run_algorithm(eng: Engine, name: str, params: dict, prefix: str = "") -> VertexArray:
    man = eng.man
    p = resolve_params(name, params, man.meta.num_vertices, man.meta.edge_payload_bytes, man.reversed is not None)
    return DRIVERS[name](eng, prefix=prefix + name + "_", **p)


# -- outputs -------------------------------------------------------------------

def write_output(eng: Engine, arr: VertexArray, out_dir: str, name: str):
    """One raw little-endian file per node plus a small JSON sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    vals = eng.local_values(arr)
    base = os.path.join(out_dir, f"{name}.node{eng.rank}")
    vals.astype(vals.dtype.newbyteorder("<")).tofile(base + ".bin")
    with open(base + ".json", "w") as f:
        json.dump({"lo": eng.lo, "hi": eng.hi, "dtype": vals.dtype.newbyteorder("<").str}, f)


def read_output(out_dir: str, name: str) -> np.ndarray:
    """Reassemble a full output array from the per-node files."""
    parts = []
    for fn in os.listdir(out_dir):
        if fn.startswith(name + ".node") and fn.endswith(".json"):
            with open(os.path.join(out_dir, fn)) as f:
                meta = json.load(f)
            data = np.fromfile(os.path.join(out_dir, fn[:-5] + ".bin"), dtype=meta["dtype"])
            if len(data) != meta["hi"] - meta["lo"]:
                raise AlgorithmError(f"{fn}: expected {meta['hi'] - meta['lo']} values, found {len(data)}")
            parts.append((meta["lo"], data))
    if not parts:
        raise FileNotFoundError(f"no output named {name!r} in {out_dir}")
    parts.sort(key=lambda x: x[0])
    return np.concatenate([d for _, d in parts])


def export_text(values: np.ndarray, path: str):
    """``vertex_id<TAB>value`` per line; floats use repr so they round-trip."""
    with open(path, "w") as f:
        if values.dtype.kind == "f":
            for v, x in enumerate(values.tolist()):
                f.write(f"{v}\t{x!r}\n")
        else:
            for v, x in enumerate(values.tolist()):
                f.write(f"{v}\t{x}\n")
