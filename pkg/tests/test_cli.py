import csv
import os

import numpy as np
import pytest

from oocgraph.algorithms import read_output
from oocgraph.cli import build_parser, engine_config_from_args, main
from oocgraph.config import ConfigError, RunConfig, env_name, load_engine_settings, parse_size
from oocgraph.generate import write_graph
from oocgraph.runtime import EngineConfig, metrics_header
from oocgraph.transport import free_ports

from conftest import g7_arrays


@pytest.fixture
def g7dir(tmp_path):
    src, dst = g7_arrays()
    w = np.arange(1, 10, dtype=np.float32)
    write_graph(tmp_path / "g7.edges", src, dst, w)
    code = main(["preprocess", "--input", str(tmp_path / "g7.edges"), "--out", str(tmp_path / "g"), "--vertices", "7",
                 "--payload-bytes", "4", "--nodes", "2", "--batch-size", "2", "--reversed"])
    assert code == 0
    return str(tmp_path / "g")


def run(tmp_path, g, *extra, algo="pr"):
    return main(["run", "--graph", g, "--work", str(tmp_path / "work"), "--out", str(tmp_path / "out"),
                 "--algo", algo, *extra])


@pytest.mark.parametrize("text,n", [("32M", 32 << 20), ("1.5g", 3 << 29), ("100", 100), ("4KiB", 4096)])
def test_parse_size(text, n):
    assert parse_size(text) == n


def test_precedence(tmp_path):
    ini = tmp_path / "e.ini"
    ini.write_text("[engine]\nthreads = 2\nmemory_budget_bytes = 1M\ngamma = 10\n")
    env = {env_name("threads"): "3", env_name("gamma"): "20"}
    got = load_engine_settings(str(ini), env, {"gamma": 30, "threads": None})
    assert got == {"threads": 3, "memory_budget_bytes": 1 << 20, "gamma": 30}


def test_precedence_through_cli(tmp_path, monkeypatch):
    ini = tmp_path / "e.ini"
    ini.write_text("[engine]\nthreads = 2\ndispatch_cost_factor = 8\n")
    monkeypatch.setenv("OOCGRAPH_THREADS", "5")
    args = build_parser().parse_args(["run", "--graph", "g", "--work", "w", "--out", "o", "--algo", "pr",
                                      "--config", str(ini), "--memory-budget", "8M", "--checkpoints", "off"])
    cfg = engine_config_from_args(args)
    assert (cfg.threads, cfg.dispatch_cost_factor, cfg.memory_budget_bytes, cfg.checkpoints_keep) == \
        (5, 8.0, 8 << 20, 0)


def test_bad_config_key(tmp_path):
    ini = tmp_path / "e.ini"
    ini.write_text("[engine]\nturbo = 1\n")
    with pytest.raises(ConfigError):
        load_engine_settings(str(ini), {})


def test_overrides_need_testing_flag():
    run_cfg = RunConfig("g", [("pr", {})], "w", "o", local_nodes=1, engine=EngineConfig(force_dispatch="push"))
    with pytest.raises(ConfigError, match="--testing"):
        run_cfg.validate()
    run_cfg.testing = True
    run_cfg.validate()


def test_every_flag_has_help():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.choices and "run" in a.choices)
    for name, p in sub.choices.items():
        for a in p._actions:
            if a.option_strings and a.dest != "help":
                assert a.help, f"{name} {a.option_strings[0]} has no help"
                assert a.option_strings[0] in p.format_help()


def test_run_pr_two_nodes(tmp_path, g7dir):
    assert run(tmp_path, g7dir, "--iters", "5", "--local-nodes", "2", "--strict",
               "--metrics", str(tmp_path / "m.csv")) == 0
    assert sorted(f for f in os.listdir(tmp_path / "out") if f.endswith(".bin")) == ["pr.node0.bin", "pr.node1.bin"]
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == metrics_header(2)
    edge_pass = [r for r in rows[1:] if r[2] == "pass" and r[0] == "0"]
    assert edge_pass and all(int(r[5]) == 2 for r in edge_pass)  # sent 0 -> 1 equals |L_01|
    assert main(["verify", "--graph", g7dir, "--out", str(tmp_path / "out"), "--algo", "pr", "--iters", "5"]) == 0


def test_no_manifest(tmp_path):
    assert run(tmp_path, str(tmp_path), "--source", "0", "--local-nodes", "1", algo="bfs") == 3


def test_manifest_mismatch(tmp_path, g7dir):
    assert run(tmp_path, g7dir, "--local-nodes", "3") == 4


def test_unreachable_peer(tmp_path, g7dir):
    hosts = tmp_path / "hosts"
    hosts.write_text("".join(f"127.0.0.1:{p}\n" for p in free_ports(2)))
    assert run(tmp_path, g7dir, "--hostfile", str(hosts), "--rank", "0", "--connect-timeout", "0.5") == 5


def test_budget_too_small(tmp_path, g7dir):
    assert run(tmp_path, g7dir, "--local-nodes", "2", "--memory-budget", "16") == 6


def test_strict_oversend(tmp_path, g7dir):
    assert run(tmp_path, g7dir, "--local-nodes", "2", "--strict", "--testing", "--inject-oversend") == 7
    assert run(tmp_path, g7dir, "--local-nodes", "2", "--inject-oversend") == 2  # needs --testing


def test_usage_errors(tmp_path, g7dir):
    assert run(tmp_path, g7dir, "--local-nodes", "2", algo="pagerank") == 2
    assert run(tmp_path, g7dir, "--local-nodes", "2", "--source", "9", algo="bfs") == 2


def test_verify_pass_and_failures(tmp_path, g7dir):
    out = str(tmp_path / "out")
    assert run(tmp_path, g7dir, "--local-nodes", "2", algo="bfs,sssp,wcc,pr") == 0
    for algo in ("bfs", "sssp", "wcc", "pr"):
        assert main(["verify", "--graph", g7dir, "--out", out, "--algo", algo]) == 0
    # Corrupt one BFS level on node 1 (vertex 4).
    path = os.path.join(out, "bfs.node1.bin")
    vals = np.fromfile(path, dtype="<u8")
    vals[1] += 1
    vals.tofile(path)
    assert main(["verify", "--graph", g7dir, "--out", out, "--algo", "bfs"]) == 8


def test_verify_messages(tmp_path, g7dir, capsys):
    out = str(tmp_path / "out")
    assert run(tmp_path, g7dir, "--local-nodes", "2", "--iters", "3", algo="pr,bfs") == 0
    path = os.path.join(out, "bfs.node1.bin")
    vals = np.fromfile(path, dtype="<u8")
    vals[1] += 1
    vals.tofile(path)
    capsys.readouterr()
    assert main(["verify", "--graph", g7dir, "--out", out, "--algo", "bfs"]) == 8
    assert "vertex 4" in capsys.readouterr().out
    assert main(["verify", "--graph", g7dir, "--out", out, "--algo", "pr", "--iters", "5"]) == 8
    assert "--iters" in capsys.readouterr().out
    assert main(["verify", "--graph", g7dir, "--out", out, "--algo", "pr", "--iters", "3"]) == 0


def test_export(tmp_path, g7dir):
    assert run(tmp_path, g7dir, "--local-nodes", "2", algo="bfs") == 0
    txt = tmp_path / "bfs.txt"
    assert main(["export", "--out", str(tmp_path / "out"), "--name", "bfs", "--text", str(txt)]) == 0
    assert txt.read_text().splitlines() == [f"{v}\t{x}" for v, x in enumerate([0, 1, 1, 2, 3, 2, 3])]


def test_sort_then_preprocess(tmp_path):
    src, dst = g7_arrays()
    perm = np.random.default_rng(0).permutation(len(src))
    write_graph(tmp_path / "raw", src[perm], dst[perm])
    assert main(["sort", str(tmp_path / "raw"), str(tmp_path / "sorted"), "--memory-budget", "4K"]) == 0
    assert main(["preprocess", "--input", str(tmp_path / "sorted"), "--out", str(tmp_path / "g"),
                 "--vertices", "7"]) == 0
    assert main(["preprocess", "--input", str(tmp_path / "raw"), "--out", str(tmp_path / "g2"),
                 "--vertices", "7"]) == 2


def test_fault_then_recover(tmp_path, g7dir):
    ref = tmp_path / "ref"
    assert run(ref, g7dir, "--local-nodes", "2", algo="pr,sssp") == 0
    assert run(tmp_path, g7dir, "--local-nodes", "2", "--testing", "--fault", "1:4:mid", algo="pr,sssp") == 17
    assert main(["recover", "--work", str(tmp_path / "work")]) == 0
    for name in ("pr", "sssp"):
        assert read_output(str(tmp_path / "out"), name).tobytes() == read_output(str(ref / "out"), name).tobytes()


def test_recover_without_run(tmp_path):
    assert main(["recover", "--work", str(tmp_path)]) == 10
