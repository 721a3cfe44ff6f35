import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oocgraph.algorithms import (UNREACHED, AlgorithmError, NegativeWeightError, from_fixed, resolve_params,
                                 run_algorithm, to_fixed)
from oocgraph.oracles import compare, pagerank_dense, pagerank_oracle, run_oracle
from oocgraph.preprocess import Manifest, load_all_edges
from oocgraph.runtime import Engine, EngineConfig

from conftest import build_graph, g7_arrays, random_graph, run_steps


def solve(tmp, edges, n, name, weights=None, **params):
    src = np.array([e[0] for e in edges], dtype=np.uint64)
    dst = np.array([e[1] for e in edges], dtype=np.uint64)
    w = None if weights is None else np.array(weights, dtype=np.float32)
    gdir = build_graph(str(tmp), src, dst, n, weights=w, batch_size=2, reversed=True)
    eng = Engine(gdir, str(tmp / "work"), config=EngineConfig(strict=True))
    try:
        return run_algorithm(eng, name, params).read_all()
    finally:
        eng.close()


def test_pr_cycle(tmp_path):
    r = solve(tmp_path, [(0, 1), (1, 2), (2, 0)], 3, "pr", iters=4)
    assert np.allclose(r, 1 / 3, rtol=1e-15, atol=0)


def test_pr_single_vertex(tmp_path):
    assert solve(tmp_path, [], 1, "pr", iters=3).tolist() == [1.0]


def test_pr_g7(g7_engine):
    src, dst = g7_arrays()
    got = run_algorithm(g7_engine, "pr", {"iters": 5}).read_all()
    want = pagerank_dense(src, dst, 7, 5)
    assert np.all(np.abs(got - want) <= 1e-12 * want)


def test_pr_oracles_agree():
    rng = np.random.default_rng(3)
    src, dst = rng.integers(0, 30, 200), rng.integers(0, 30, 200)
    assert np.allclose(pagerank_oracle(src, dst, 30, 7), pagerank_dense(src, dst, 30, 7), rtol=1e-13)


@given(st.floats(0, 1))
def test_fixed_point_round_trip(x):
    assert abs(from_fixed(to_fixed(np.array([x])))[0] - x) <= 2.0 ** -63


def test_bfs_path_and_isolated(tmp_path):
    assert solve(tmp_path / "a", [(0, 1), (1, 2)], 3, "bfs").tolist() == [0, 1, 2]
    lv = solve(tmp_path / "b", [(0, 1), (1, 2)], 3, "bfs", source=2)
    assert lv.tolist() == [UNREACHED, UNREACHED, 0]


def test_bfs_g7(g7_engine):
    src, dst = g7_arrays()
    got = run_algorithm(g7_engine, "bfs", {"source": 0}).read_all()
    assert got.tolist() == [0, 1, 1, 2, 3, 2, 3]
    assert compare("bfs", got, run_oracle("bfs", src, dst, None, 7, {"source": 0})) is None


def test_wcc_examples(tmp_path):
    assert solve(tmp_path / "a", [(0, 1), (2, 3)], 4, "wcc").tolist() == [0, 0, 2, 2]
    assert solve(tmp_path / "b", [(0, 1), (1, 2), (2, 3), (3, 0)], 4, "wcc").tolist() == [0] * 4
    # Reaching the minimum label needs the reversed direction here.
    assert solve(tmp_path / "c", [(3, 0), (3, 2), (4, 1)], 5, "wcc").tolist() == [0, 1, 0, 0, 1]


def test_sssp_examples(tmp_path):
    assert solve(tmp_path / "a", [(0, 1), (1, 2)], 3, "sssp", weights=[1.0, 1.0]).tolist() == [0.0, 1.0, 2.0]
    d = solve(tmp_path / "b", [(0, 1), (0, 2), (1, 2)], 4, "sssp", weights=[1.0, 5.0, 1.5])
    assert d.tolist() == [0.0, 1.0, 2.5, float("inf")]


def test_sssp_unit_weights_equal_bfs(tmp_path):
    src, dst, _, n = random_graph(11, n=200, m=600)
    gdir = build_graph(str(tmp_path), src, dst, n, weights=np.ones(len(src), np.float32), batch_size=16)
    eng = Engine(gdir, str(tmp_path / "work"))
    d = run_algorithm(eng, "sssp", {"source": 0}).read_all()
    lv = run_algorithm(eng, "bfs", {"source": 0}).read_all()
    eng.close()
    reach = lv != UNREACHED
    assert np.array_equal(d[reach], lv[reach].astype(np.float64))
    assert np.all(np.isinf(d[~reach]))


def test_sssp_negative_weight(tmp_path):
    with pytest.raises(NegativeWeightError, match="0->1"):
        solve(tmp_path, [(0, 1)], 2, "sssp", weights=[-1.0])


@pytest.mark.parametrize("name,params,kw,msg", [
    ("pagerank", {}, {}, "unknown"),
    ("pr", {"iters": 0}, {}, "iters"),
    ("pr", {"damping": 1.0}, {}, "damping"),
    ("pr", {"source": 1}, {}, "unexpected"),
    ("bfs", {"source": 7}, {}, "source"),
    ("sssp", {}, {"payload_bytes": 0}, "weights"),
    ("wcc", {}, {"has_reversed": False}, "reversed"),
])
def test_parameter_validation(name, params, kw, msg):
    args = dict(num_vertices=7, payload_bytes=4, has_reversed=True)
    args.update(kw)
    with pytest.raises(AlgorithmError, match=msg):
        resolve_params(name, params, **args)


def test_validation_precedes_process_calls(g7_engine):
    with pytest.raises(AlgorithmError):
        run_algorithm(g7_engine, "bfs", {"source": 99})
    assert g7_engine.calls == 0


@given(st.integers(0, 10_000))
@settings(max_examples=8, deadline=None)
def test_random_graphs_match_oracles(tmp_path_factory, seed):
    src, dst, w, n = random_graph(seed, n=int(np.random.default_rng(seed).integers(2, 300)))
    tmp = tmp_path_factory.mktemp("alg")
    gdir = build_graph(str(tmp), src, dst, n, weights=w, batch_size=32, reversed=True)
    eng = Engine(gdir, str(tmp / "work"), config=EngineConfig(strict=True))
    s, d, pay = load_all_edges(Manifest.load(gdir))
    for name in ("pr", "bfs", "wcc", "sssp"):
        got = run_algorithm(eng, name, {}).read_all()
        assert compare(name, got, run_oracle(name, s, d, pay, n, {})) is None, name
    eng.close()


def test_outputs_identical_across_partition_counts(tmp_path):
    src, dst, w, n = random_graph(5, n=300, m=1500)
    steps = [("pr", {"iters": 5}), ("bfs", {"source": 3}), ("wcc", {}), ("sssp", {"source": 3})]
    runs = []
    for P in (1, 2, 4):
        gdir = build_graph(str(tmp_path / f"p{P}"), src, dst, n, weights=w, nodes=P, batch_size=64, reversed=True)
        runs.append(run_steps(str(tmp_path / f"p{P}"), gdir, steps, P=P))
    for name in runs[0]:
        for other in runs[1:]:
            assert runs[0][name].tobytes() == other[name].tobytes(), name
