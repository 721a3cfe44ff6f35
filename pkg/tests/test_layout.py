import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oocgraph.layout import (BatchLayout, DegreeTable, GraphMeta, LayoutError, PartitionLayout, locate, unlocate,
                             vertex_weight, vertex_weights)

from conftest import g7_arrays

G7_LAYOUT = PartitionLayout((0, 3, 7))


def test_graph_meta_defaults():
    m = GraphMeta(num_vertices=7, num_edges=9, num_partitions=2)
    assert m.alpha == 3
    assert (m.csr_inflate_ratio, m.gamma, m.filter_skip_ratio) == (32.0, 1024, 2.0)
    assert GraphMeta.from_dict(m.to_dict()) == m


@pytest.mark.parametrize("kw", [dict(num_vertices=0), dict(num_partitions=0), dict(alpha=-1),
                                dict(csr_inflate_ratio=0.5), dict(gamma=0), dict(filter_skip_ratio=0)])
def test_graph_meta_rejects_bad_values(kw):
    args = dict(num_vertices=7, num_edges=9)
    args.update(kw)
    with pytest.raises(LayoutError):
        GraphMeta(**args)


@pytest.mark.parametrize("bounds", [(1, 7), (0, 5, 3), (0,)])
def test_partition_layout_rejects_bad_boundaries(bounds):
    with pytest.raises(LayoutError):
        PartitionLayout(bounds)


@pytest.mark.parametrize("v,expected", [(0, (0, 0, 0)), (4, (1, 0, 1)), (6, (1, 1, 1))])
def test_locate_examples(v, expected):
    assert locate(v, G7_LAYOUT, BatchLayout(2)) == expected


@pytest.mark.parametrize("v", [-1, 7, 100])
def test_locate_out_of_range(v):
    with pytest.raises(LayoutError):
        locate(v, G7_LAYOUT, BatchLayout(2))


def test_g7_batches():
    b = BatchLayout(2)
    assert b.batches_of(G7_LAYOUT, 0) == [(0, 2), (2, 3)]
    assert b.batches_of(G7_LAYOUT, 1) == [(3, 5), (5, 7)]


@st.composite
def layouts(draw):
    n = draw(st.integers(1, 2000))
    P = draw(st.integers(1, min(n, 8)))
    cuts = sorted(draw(st.lists(st.integers(1, max(1, n - 1)), min_size=P - 1, max_size=P - 1, unique=True))) \
        if n > 1 else []
    bounds = (0, *cuts, n) if len(cuts) == P - 1 else (0, n)
    return PartitionLayout(tuple(bounds)), BatchLayout(draw(st.integers(1, 300)))


@given(layouts())
@settings(max_examples=60, deadline=None)
def test_ranges_tile_vertex_space(lb):
    layout, batching = lb
    seen = []
    for p in range(layout.num_partitions):
        for lo, hi in batching.batches_of(layout, p):
            assert lo < hi
            seen.extend(range(lo, hi))
    assert seen == list(range(layout.num_vertices))


@given(layouts(), st.data())
@settings(max_examples=60, deadline=None)
def test_locate_inverts_enumeration(lb, data):
    layout, batching = lb
    v = data.draw(st.integers(0, layout.num_vertices - 1))
    p, b, off = locate(v, layout, batching)
    lo, hi = batching.batches_of(layout, p)[b]
    assert lo <= v < hi
    assert unlocate(p, b, off, layout, batching) == v


def test_partition_of_vectorized():
    v = np.arange(7)
    assert G7_LAYOUT.partition_of(v).tolist() == [0, 0, 0, 1, 1, 1, 1]


def test_vertex_weight_examples():
    deg = DegreeTable(np.array([1, 2, 0]), np.array([2, 1, 0]))
    assert vertex_weight(0, 3, deg) == 6
    assert vertex_weight(1, 3, deg) == 6
    assert vertex_weight(2, 0, deg) == 0


def test_g7_degrees_and_weights():
    src, dst = g7_arrays()
    deg = DegreeTable.from_edges(src, dst, 7)
    assert vertex_weights(3, deg).tolist() == [6, 5, 6, 6, 5, 6, 5]
    inc, out = deg.partition_totals(G7_LAYOUT)
    assert sum(inc) == sum(out) == deg.num_edges == 9


@given(st.lists(st.tuples(st.integers(0, 49), st.integers(0, 49)), max_size=400), st.integers(0, 5))
@settings(max_examples=50, deadline=None)
def test_degree_table_matches_recount(edges, alpha):
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    deg = DegreeTable.from_edges(src, dst, 50)
    for v in range(50):
        assert deg.out_degree[v] == sum(1 for s, _ in edges if s == v)
        assert deg.in_degree[v] == sum(1 for _, d in edges if d == v)
    assert deg.out_degree.sum() == deg.in_degree.sum() == len(edges)
    # Summing vertex weights over a range gives alpha*|range| + in + out of the range.
    w = vertex_weights(alpha, deg)
    assert int(w[10:30].sum()) == alpha * 20 + deg.incoming(10, 30) + deg.outgoing(10, 30)
