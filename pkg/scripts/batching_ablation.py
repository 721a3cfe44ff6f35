"""PR with budget-derived batches versus one batch per partition, in-process.

Reports wall time and the traced allocation peak of each run. The unbatched
run is tried first under the budget (expected to be refused), then uncapped.
"""
import argparse
import os
import tempfile
import time
import tracemalloc

import numpy as np

from oocgraph.algorithms import run_algorithm
from oocgraph.cli import parse_size
from oocgraph.generate import erdos_renyi, write_graph
from oocgraph.oracles import compare, pagerank_oracle
from oocgraph.preprocess import PreprocessConfig, preprocess
from oocgraph.runtime import Engine, EngineConfig, MemoryBudgetError


def timed_pr(graph, work, budget, iters):
    eng = Engine(graph, work, config=EngineConfig(memory_budget_bytes=budget, checkpoints_keep=1))
    try:
        tracemalloc.start()
        t = time.perf_counter()
        try:
            arr = run_algorithm(eng, "pr", {"iters": iters})
            secs, peak = time.perf_counter() - t, tracemalloc.get_traced_memory()[1]
        finally:
            tracemalloc.stop()
        return arr.read_all(), secs, peak
    finally:
        eng.close()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--vertices", type=int, default=2_000_000)
    ap.add_argument("--edges", type=int, default=8_000_000)
    ap.add_argument("--memory-budget", default="15MiB")
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--seed", type=int, default=77)
    ap.add_argument("--check", action="store_true", help="compare both runs with the in-memory oracle")
    ap.add_argument("--work", default=None)
    args = ap.parse_args()

    budget = parse_size(args.memory_budget)
    work = args.work or tempfile.mkdtemp(prefix="oocgraph-ablation-")
    n = args.vertices
    src, dst = erdos_renyi(n, args.edges, np.random.default_rng(args.seed))
    edges = os.path.join(work, "graph.edges")
    write_graph(edges, src, dst)
    want = pagerank_oracle(src, dst, n, args.iters) if args.check else None
    del src, dst
    cfg = PreprocessConfig(n, memory_budget=budget, mode="fully", vertex_record_bytes=64)
    batched = preprocess(edges, os.path.join(work, "batched"), cfg)
    preprocess(edges, os.path.join(work, "unbatched"), cfg, batch_size=n)

    print("variant,batch_size,budget_enforced,seconds,peak_bytes,peak_over_budget")
    out, secs, peak = timed_pr(batched.root, os.path.join(work, "w0"), budget, args.iters)
    print(f"batched,{batched.batching.batch_size},yes,{secs:.2f},{peak},{peak / budget:.2f}")
    if want is not None:
        print(f"# batched vs oracle: {compare('pr', out, want, 1e-9) or 'ok'}")
    try:
        timed_pr(os.path.join(work, "unbatched"), os.path.join(work, "w1"), budget, args.iters)
        print(f"unbatched,{n},yes,completed,,")
    except MemoryBudgetError as e:
        print(f"unbatched,{n},yes,refused,,  # {e}")
    out, secs, peak = timed_pr(os.path.join(work, "unbatched"), os.path.join(work, "w2"), 1 << 40, args.iters)
    print(f"unbatched,{n},no,{secs:.2f},{peak},{peak / budget:.2f}")
    if want is not None:
        print(f"# unbatched vs oracle: {compare('pr', out, want, 1e-9) or 'ok'}")


if __name__ == "__main__":
    main()
