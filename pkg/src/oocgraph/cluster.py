"""Running a job on one rank, and launching P loopback ranks on this host."""
from __future__ import annotations

import csv
import logging
import multiprocessing as mp
import os
from multiprocessing.connection import wait
from typing import List, Optional, Tuple

from .algorithms import AlgorithmError, run_algorithm, write_output
from .config import ConfigError, RunConfig
from .preprocess import Manifest, PreprocessError
from .runtime import (FAULT_EXIT, Engine, ManifestMismatch, MemoryBudgetError, TrafficBoundViolation)
from .storage import RecoveryError
from .transport import ClusterConfig, PeerFailure, Transport, TransportError, free_ports, read_hostfile

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_NO_MANIFEST = 3
EXIT_MANIFEST_MISMATCH = 4
EXIT_UNREACHABLE = 5
EXIT_BUDGET = 6
EXIT_TRAFFIC = 7
EXIT_VERIFY = 8
EXIT_PEER_FAILED = 9
EXIT_RECOVERY = 10
EXIT_FAULT = FAULT_EXIT


def exit_code_for(exc: BaseException) -> int:
    for cls, code in ((FileNotFoundError, EXIT_NO_MANIFEST), (ManifestMismatch, EXIT_MANIFEST_MISMATCH),
                      (MemoryBudgetError, EXIT_BUDGET), (TrafficBoundViolation, EXIT_TRAFFIC),
                      (PeerFailure, EXIT_PEER_FAILED), (TransportError, EXIT_UNREACHABLE),
                      (RecoveryError, EXIT_RECOVERY), (ConfigError, EXIT_USAGE), (AlgorithmError, EXIT_USAGE),
                      (PreprocessError, EXIT_USAGE)):
        if isinstance(exc, cls):
            return code
    return EXIT_ERROR


def node_metrics_path(run: RunConfig, rank: int) -> str:
    return os.path.join(run.work_dir, f"metrics.node{rank}.csv")


def execute(run: RunConfig, rank: int, endpoints: List[Tuple[str, int]]) -> int:
    """Run every step of ``run`` as rank ``rank``; returns an exit code."""
    try:
        man = Manifest.load(run.graph)
        if man.layout.num_partitions != len(endpoints):
            raise ManifestMismatch(f"graph has {man.layout.num_partitions} partitions, "
                                   f"cluster has {len(endpoints)} nodes")
    except Exception as e:  # noqa: BLE001
        log.error("rank %d: %s", rank, e)
        return exit_code_for(e)
    try:
        transport = Transport(ClusterConfig(endpoints, rank, connect_timeout=run.connect_timeout,
                                            queue_depth=run.engine.pipeline_queue_depth)).start()
    except (TransportError, OSError) as e:
        log.error("rank %d: %s", rank, e)
        return EXIT_UNREACHABLE
    eng = None
    try:
        eng = Engine(run.graph, run.work_dir, transport, run.engine, recover=run.recover,
                     metrics_path=node_metrics_path(run, rank))
        for k, ((name, params), out) in enumerate(zip(run.steps, run.output_names())):
            arr = run_algorithm(eng, name, params, prefix=f"s{k}_")
            write_output(eng, arr, run.output_dir, out)
        return EXIT_OK
    except Exception as e:  # noqa: BLE001
        log.error("rank %d: %s: %s", rank, type(e).__name__, e)
        return exit_code_for(e)
    finally:
        if eng is not None:
            eng.close()
        transport.close()


def _child(run, rank, endpoints):
    code = EXIT_ERROR
    try:
        code = execute(run, rank, endpoints)
    finally:
        logging.shutdown()
        os._exit(code)


def merge_metrics(run: RunConfig, P: int, path: str):
    with open(path, "w", newline="") as out:
        w = csv.writer(out)
        for r in range(P):
            p = node_metrics_path(run, r)
            if not os.path.exists(p):
                continue
            with open(p, newline="") as f:
                rows = list(csv.reader(f))
            if r == 0 or out.tell() == 0:
                w.writerow(rows[0])
            w.writerows(rows[1:])


def _root_cause(codes: List[int]) -> int:
    """A peer-failure exit is usually a consequence; prefer the code that caused it."""
    for c in codes:
        if c not in (EXIT_PEER_FAILED, EXIT_UNREACHABLE):
            return c
    return codes[0]


def run_local(run: RunConfig, P: Optional[int] = None, timeout: Optional[float] = None,
              grace: float = 2.0) -> int:
    """Fork P loopback ranks and wait; if one fails the rest are killed.

    Returns 0, or the exit code of the failing rank that caused the others
    to fail (ranks still running ``grace`` seconds after the first failure
    are killed).
    """
    P = P or run.local_nodes or 1
    os.makedirs(run.work_dir, exist_ok=True)
    endpoints = [("127.0.0.1", p) for p in free_ports(P)]
    ctx = mp.get_context("fork")
    procs = [ctx.Process(target=_child, args=(run, r, endpoints), name=f"rank{r}") for r in range(P)]
    for p in procs:
        p.start()
    failed: List[int] = []
    live = {p.sentinel: p for p in procs}
    while live:
        ready = wait(list(live), grace if failed else timeout)
        if not ready:
            if not failed:
                failed.append(EXIT_ERROR)
                log.error("ranks did not finish within %s s", timeout)
            break
        for s in ready:
            p = live.pop(s)
            p.join()
            if p.exitcode != 0:
                failed.append(p.exitcode if p.exitcode > 0 else EXIT_ERROR)
                log.error("%s exited with %d", p.name, p.exitcode)
    for p in live.values():
        p.kill()
        p.join()
    if run.metrics:
        merge_metrics(run, P, run.metrics)
    return _root_cause(failed) if failed else EXIT_OK


def run_hostfile(run: RunConfig) -> int:
    endpoints = read_hostfile(run.hostfile)
    rank = run.rank if run.rank is not None else int(os.environ.get("OOCGRAPH_RANK", "0"))
    code = execute(run, rank, endpoints)
    if run.metrics and code == EXIT_OK:
        os.replace(node_metrics_path(run, rank), f"{run.metrics}.node{rank}")
    return code
