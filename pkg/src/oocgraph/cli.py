"""Command-line entry point: ``oocgraph <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from typing import List, Optional

from . import cluster, edgefile
from .algorithms import ALGORITHMS, AlgorithmError, export_text, read_output, resolve_params
from .cluster import EXIT_OK, EXIT_USAGE, EXIT_VERIFY, exit_code_for
from .config import ConfigError, RunConfig, load_engine_settings, parse_size
from .oracles import compare, run_oracle
from .preprocess import Manifest, PreprocessConfig, load_all_edges, preprocess
from .runtime import STRATEGIES, EngineConfig

log = logging.getLogger("oocgraph")

ORACLE_EDGE_LIMIT = 10 ** 7


def _add_preprocess(sub):
    p = sub.add_parser("preprocess", help="partition, chunk and index a sorted binary edge file")
    p.add_argument("--input", required=True, help="binary edge file sorted by (src, dst): u64 src, u64 dst, payload")
    p.add_argument("--out", required=True, help="output graph directory")
    p.add_argument("--vertices", type=int, required=True, help="number of vertices |V|")
    p.add_argument("--payload-bytes", type=int, default=0, help="edge payload bytes per record (4 for weights)")
    p.add_argument("--nodes", type=int, default=1, help="number of partitions / nodes P")
    p.add_argument("--alpha", type=int, default=None, help="per-vertex weight term (default 2P-1)")
    p.add_argument("--batch-size", type=int, default=None, help="explicit batch size (default: derived)")
    p.add_argument("--mode", choices=["semi", "fully"], default="semi", help="out-of-core mode for batch sizing")
    p.add_argument("--memory-budget", default="64M", help="memory budget, e.g. 64M")
    p.add_argument("--threads", type=int, default=1, help="worker threads assumed for batch sizing")
    p.add_argument("--vertex-record-bytes", type=int, default=32, help="vertex data bytes per vertex")
    p.add_argument("--csr-inflate-ratio", type=float, default=32.0, help="build CSR when |V_src|/|E| <= this")
    p.add_argument("--gamma", type=int, default=1024, help="random-read cost factor for CSR/DCSR choice")
    p.add_argument("--filter-skip-ratio", type=float, default=2.0, help="skip filtering when |L|/|M| >= this")
    p.add_argument("--reversed", action="store_true", help="also build the reversed graph (needed by wcc)")


def _add_sort(sub):
    p = sub.add_parser("sort", help="external sort of a binary edge file")
    p.add_argument("input", help="unsorted binary edge file")
    p.add_argument("output", help="sorted output file")
    p.add_argument("--payload-bytes", type=int, default=0, help="edge payload bytes per record")
    p.add_argument("--memory-budget", default="64M", help="memory for in-memory runs, e.g. 64M")
    p.add_argument("--by", choices=["src", "dst"], default="src", help="primary sort key")
    p.add_argument("--swap", action="store_true", help="swap src and dst first (reverse the graph)")


def _add_cluster_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--local-nodes", type=int, help="spawn P loopback processes on this host")
    g.add_argument("--hostfile", help="one host:port per line; line number is the rank")
    p.add_argument("--rank", type=int, default=None, help="this process's rank (hostfile mode; env OOCGRAPH_RANK)")
    p.add_argument("--connect-timeout", type=float, default=30.0, help="seconds to wait for peers at startup")
    p.add_argument("--log-level", default="WARNING", help="logging level (DEBUG, INFO, WARNING, ...)")


def _add_engine_args(p):
    p.add_argument("--config", help="INI file with an [engine] section")
    p.add_argument("--memory-budget", dest="memory_budget_bytes", help="engine memory budget, e.g. 256M")
    p.add_argument("--threads", type=int, help="batch worker threads")
    p.add_argument("--dispatch-cost-factor", type=float, help="constant c of the no-dispatch rule")
    p.add_argument("--filter-skip-ratio", type=float, help="override the manifest's filter skip ratio")
    p.add_argument("--gamma", type=int, help="override the manifest's gamma")
    p.add_argument("--checkpoints", help="'off' or the number K of checkpoints to keep")
    p.add_argument("--queue-depth", dest="pipeline_queue_depth", type=int, help="frames buffered per peer")
    p.add_argument("--self-order", choices=["first", "last"], default="last",
                   help="process a node's own messages before or after received ones")
    p.add_argument("--durable", action="store_true", help="fsync checkpoints and journal records")
    p.add_argument("--strict", action="store_true", help="exit nonzero when a traffic bound is violated")
    p.add_argument("--metrics", help="write per-phase counters to this CSV file")
    t = p.add_argument_group("test overrides (need --testing)")
    t.add_argument("--testing", action="store_true", help="allow the overrides below")
    t.add_argument("--force-dispatch", choices=STRATEGIES, help="use one dispatch strategy for every block")
    t.add_argument("--force-filter", choices=["on", "off"], help="always or never apply filter lists")
    t.add_argument("--fault", help="kill rank:ordinal:point (point: before|generate|mid|commit|after)")
    t.add_argument("--inject-oversend", action="store_true", help="send blocks unfiltered while flagging them filtered")


def _add_algo_args(p, required=True):
    p.add_argument("--algo", required=required, help=f"comma-separated algorithms from {sorted(ALGORITHMS)}")
    p.add_argument("--iters", type=int, help="PageRank iterations (default 5)")
    p.add_argument("--damping", type=float, help="PageRank damping (default 0.85)")
    p.add_argument("--source", type=int, help="BFS/SSSP source vertex (default 0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oocgraph", description="Distributed out-of-core graph processing.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    _add_preprocess(sub)
    _add_sort(sub)

    p = sub.add_parser("run", help="run algorithms on a preprocessed graph")
    p.add_argument("--graph", required=True, help="preprocessed graph directory")
    p.add_argument("--work", required=True, help="working directory for vertex arrays and journals")
    p.add_argument("--out", required=True, help="output directory for result arrays")
    _add_algo_args(p)
    _add_cluster_args(p)
    _add_engine_args(p)

    p = sub.add_parser("recover", help="resume a failed run from its journal")
    p.add_argument("--work", required=True, help="working directory of the failed run")
    _add_cluster_args(p)

    p = sub.add_parser("export", help="write an output array as text (vertex_id<TAB>value)")
    p.add_argument("--out", required=True, help="output directory of a run")
    p.add_argument("--name", required=True, help="output name, e.g. pr")
    p.add_argument("--text", required=True, help="text file to write")

    p = sub.add_parser("verify", help="compare run outputs with an in-memory oracle")
    p.add_argument("--graph", required=True, help="preprocessed graph directory")
    p.add_argument("--out", required=True, help="output directory of the run")
    p.add_argument("--name", help="output name (default: the algorithm name)")
    _add_algo_args(p)
    p.add_argument("--rtol", type=float, default=1e-9, help="PageRank relative tolerance")

    p = sub.add_parser("bench", help="time a run for several node counts")
    p.add_argument("edges", help="sorted binary edge file")
    p.add_argument("--vertices", type=int, required=True, help="number of vertices |V|")
    p.add_argument("--payload-bytes", type=int, default=0, help="edge payload bytes per record")
    p.add_argument("--nodes", default="1,2,4", help="comma-separated node counts")
    p.add_argument("--work", required=True, help="scratch directory")
    p.add_argument("--memory-budget", default="64M", help="per-process budget")
    p.add_argument("--mode", choices=["semi", "fully"], default="fully", help="out-of-core mode for batch sizing")
    p.add_argument("--batch-size", type=int, default=None, help="explicit batch size")
    _add_algo_args(p, required=False)
    return ap


def _steps(args) -> list:
    names = [a.strip() for a in (args.algo or "pr").split(",") if a.strip()]
    steps = []
    for n in names:
        if n not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {n!r}")
        allowed = ALGORITHMS[n].params
        params = {k: getattr(args, k) for k in ("iters", "damping", "source")
                  if k in allowed and getattr(args, k) is not None}
        steps.append((n, params))
    return steps


def engine_config_from_args(args, env=None) -> EngineConfig:
    flags = {k: getattr(args, k, None) for k in ("memory_budget_bytes", "threads", "dispatch_cost_factor",
                                                 "filter_skip_ratio", "gamma", "pipeline_queue_depth")}
    if args.checkpoints is not None:
        flags["checkpoints_keep"] = 0 if args.checkpoints == "off" else int(args.checkpoints)
    settings = load_engine_settings(args.config, env, flags)
    return EngineConfig(
        **settings,
        self_order=args.self_order,
        durable=args.durable,
        strict=args.strict,
        force_dispatch=args.force_dispatch,
        force_filter=None if args.force_filter is None else args.force_filter == "on",
        fault=args.fault,
        inject_oversend=args.inject_oversend,
    )


def _launch(run: RunConfig) -> int:
    if run.local_nodes is not None:
        return cluster.run_local(run)
    return cluster.run_hostfile(run)


def cmd_preprocess(args) -> int:
    cfg = PreprocessConfig(args.vertices, args.payload_bytes, args.nodes, args.alpha, args.batch_size,
                           parse_size(args.memory_budget), args.threads, args.mode, args.vertex_record_bytes,
                           args.csr_inflate_ratio, args.gamma, args.filter_skip_ratio, args.reversed)
    man = preprocess(args.input, args.out, cfg)
    print(f"{man.meta.num_edges} edges, boundaries {list(man.layout.boundaries)}, "
          f"batch size {man.batching.batch_size}")
    return EXIT_OK


def cmd_sort(args) -> int:
    n = edgefile.external_sort(args.input, args.output, args.payload_bytes, parse_size(args.memory_budget),
                               by=args.by, swap=args.swap)
    print(f"sorted {n} records")
    return EXIT_OK


def cmd_run(args) -> int:
    if not os.path.exists(os.path.join(args.graph, "manifest.json")):
        print(f"error: no manifest in {args.graph}; run preprocess first", file=sys.stderr)
        return cluster.EXIT_NO_MANIFEST
    if args.local_nodes is None and args.hostfile is None:
        args.local_nodes = Manifest.load(args.graph).layout.num_partitions
    run = RunConfig(graph=os.path.abspath(args.graph), steps=_steps(args), work_dir=os.path.abspath(args.work),
                    output_dir=os.path.abspath(args.out), local_nodes=args.local_nodes, hostfile=args.hostfile,
                    rank=args.rank, engine=engine_config_from_args(args),
                    metrics=os.path.abspath(args.metrics) if args.metrics else None, testing=args.testing,
                    connect_timeout=args.connect_timeout)
    run.validate()
    os.makedirs(run.work_dir, exist_ok=True)
    run.save(os.path.join(run.work_dir, "run.json"))
    return _launch(run)


def cmd_recover(args) -> int:
    path = os.path.join(args.work, "run.json")
    if not os.path.exists(path):
        print(f"error: no run.json in {args.work}", file=sys.stderr)
        return cluster.EXIT_RECOVERY
    run = RunConfig.load(path)
    run.recover = True
    run.engine.fault = None
    if args.local_nodes is not None or args.hostfile is not None:
        run.local_nodes, run.hostfile = args.local_nodes, args.hostfile
    if args.rank is not None:
        run.rank = args.rank
    run.connect_timeout = args.connect_timeout
    return _launch(run)


def cmd_export(args) -> int:
    export_text(read_output(args.out, args.name), args.text)
    return EXIT_OK


def verify_outputs(graph: str, out: str, name: str, params: dict, output_name: Optional[str] = None,
                   rtol: float = 1e-9) -> Optional[str]:
    """Recompute ``name`` in memory and diff; returns an error message or None."""
    man = Manifest.load(graph)
    if man.meta.num_edges > ORACLE_EDGE_LIMIT:
        raise ConfigError(f"graph has {man.meta.num_edges} edges; the in-memory oracle is limited to "
                          f"{ORACLE_EDGE_LIMIT}. Verify on a smaller sample instead.")
    p = resolve_params(name, params, man.meta.num_vertices, man.meta.edge_payload_bytes, man.reversed is not None)
    src, dst, pay = load_all_edges(man)
    want = run_oracle(name, src, dst, pay, man.meta.num_vertices, p)
    got = read_output(out, output_name or name)
    return compare(name, got, want, rtol)


def cmd_verify(args) -> int:
    steps = _steps(args)
    if len(steps) != 1:
        raise ConfigError("verify takes exactly one algorithm")
    name, params = steps[0]
    msg = verify_outputs(args.graph, args.out, name, params, args.name, args.rtol)
    if msg is None:
        print(f"{name}: PASS")
        return EXIT_OK
    if name == "pr":
        msg += " (check that --iters and --damping match the run)"
    print(f"{name}: FAIL {msg}")
    return EXIT_VERIFY


def cmd_bench(args) -> int:
    steps = _steps(args)
    budget = parse_size(args.memory_budget)
    print("nodes,seconds")
    for P in [int(x) for x in args.nodes.split(",")]:
        gdir = os.path.join(args.work, f"graph_p{P}")
        cfg = PreprocessConfig(args.vertices, args.payload_bytes, P, batch_size=args.batch_size,
                               memory_budget=budget, mode=args.mode, reversed=any(n == "wcc" for n, _ in steps))
        preprocess(args.edges, gdir, cfg)
        run = RunConfig(graph=gdir, steps=steps, work_dir=os.path.join(args.work, f"work_p{P}"),
                        output_dir=os.path.join(args.work, f"out_p{P}"), local_nodes=P,
                        engine=EngineConfig(memory_budget_bytes=budget, checkpoints_keep=1))
        t0 = time.perf_counter()
        code = cluster.run_local(run)
        if code:
            return code
        print(f"{P},{time.perf_counter() - t0:.3f}", flush=True)
    return EXIT_OK


COMMANDS = {"preprocess": cmd_preprocess, "sort": cmd_sort, "run": cmd_run, "recover": cmd_recover,
            "export": cmd_export, "verify": cmd_verify, "bench": cmd_bench}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(args, "log_level", "WARNING").upper(),
                        format="%(asctime)s %(processName)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except (ConfigError, AlgorithmError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
