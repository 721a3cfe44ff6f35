import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oocgraph.storage import RecoveryError, RunJournal, StateError, VertexArray

G7_NODE1 = [(3, 5), (5, 7)]


def make(tmp, dtype="<i8", batches=G7_NODE1, init=0, keep=2, **kw):
    return VertexArray(str(tmp), "a", dtype, batches, keep=keep, **kw).create(init)


def test_constant_init(tmp_path):
    a = make(tmp_path, batches=[(0, 3), (3, 7)])
    assert a.read_all().tolist() == [0] * 7


def test_identity_init(tmp_path):
    a = make(tmp_path, init=lambda v: v)
    assert a.read_batch(0).tolist() == [3, 4]


def test_bitmap_block_length(tmp_path):
    a = make(tmp_path, dtype=bool, batches=[(0, 9), (9, 17)], init=lambda v: v % 3 == 0)
    assert a.element_bytes == 1
    assert [a.block_length(0), a.block_length(1)] == [2, 1]
    assert a.read_all().tolist() == [v % 3 == 0 for v in range(17)]


def test_write_outside_call(tmp_path):
    with pytest.raises(StateError):
        make(tmp_path).write_batch_cow(0, np.array([1, 2]))


def test_copy_on_write_shares_untouched_batch(tmp_path):
    a = make(tmp_path, init=lambda v: v)
    old = list(a.current)
    a.begin_call()
    a.write_batch_cow(1, np.array([7, 7]))
    first = a.pending[1]
    a.write_batch_cow(1, np.array([8, 8]))
    assert a.pending == {1: first}
    a.commit(1)
    assert a.checkpoints[1][0] == old[0]
    assert a.checkpoints[1][1] != old[1]
    assert a.refcount(old[0]) == 2
    # The prior checkpoint's block still holds the old values.
    assert np.frombuffer(a.store.get(old[1]), "<i8").tolist() == [5, 6]
    assert a.read_all().tolist() == [3, 4, 8, 8]


def test_retention_and_reclaim(tmp_path):
    a = make(tmp_path, keep=1)
    shared = a.current[0]
    for c in (1, 2, 3):
        a.begin_call()
        a.write_batch_cow(1, np.array([c, c]))
        a.commit(c)
        a.gc()
    assert list(a.checkpoints) == [3]
    assert a.refcount(shared) == 1
    assert len(a.store.blocks) == 2
    assert a.store.live_bytes() == 32


def test_drop_last_reference_reclaims(tmp_path):
    a = make(tmp_path, keep=1)
    b1 = a.current[1]
    a.begin_call()
    a.write_batch_cow(1, np.array([1, 1]))
    a.commit(1)
    assert a.refcount(b1) == 1
    a.gc()
    assert a.refcount(b1) == 0 and b1 not in a.store.blocks
    size = os.path.getsize(a.blk_path)
    a.begin_call()
    a.write_batch_cow(1, np.array([2, 2]))
    a.commit(2)
    a.gc()
    # The freed extent is reused, so the file does not grow.
    assert os.path.getsize(a.blk_path) <= size


def test_abort_discards_pending(tmp_path):
    a = make(tmp_path, init=lambda v: v)
    a.begin_call()
    a.write_batch_cow(0, np.array([0, 0]))
    a.abort()
    assert a.read_all().tolist() == [3, 4, 5, 6]
    assert len(a.store.blocks) == 2


def test_recover_to_checkpoint(tmp_path):
    a = make(tmp_path, init=lambda v: v, keep=3)
    for c in (1, 2):
        a.begin_call()
        a.write_batch_cow(0, np.array([c, c]))
        a.commit(c)
    a.begin_call()
    a.write_batch_cow(1, np.array([9, 9]))  # crash before commit
    a.close()
    b = VertexArray(str(tmp_path), "a", "<i8", G7_NODE1, keep=3).open_at(1)
    assert b.read_all().tolist() == [1, 1, 5, 6]
    assert list(b.checkpoints) == [0, 1]
    b.begin_call()
    b.write_batch_cow(1, np.array([4, 4]))
    b.commit(2)
    assert b.read_all().tolist() == [1, 1, 4, 4]


def test_recover_untouched_array_keeps_block_ids(tmp_path):
    a = make(tmp_path, init=lambda v: v)
    ids = list(a.current)
    a.close()
    b = VertexArray(str(tmp_path), "a", "<i8", G7_NODE1).open_at(5)
    assert b.current == ids


def test_recover_layout_mismatch(tmp_path):
    make(tmp_path).close()
    with pytest.raises(RecoveryError, match="'a'"):
        VertexArray(str(tmp_path), "a", "<i8", [(3, 7)]).open_at(0)


def test_no_checkpointing_overwrites_in_place(tmp_path):
    a = make(tmp_path, checkpointing=False)
    ids = list(a.current)
    a.begin_call()
    a.write_batch_cow(0, np.array([5, 5]))
    assert a.commit(1) is None
    assert a.current == ids and a.read_batch(0).tolist() == [5, 5]


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(-100, 100)), min_size=1, max_size=25), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_space_bounded_by_retained_checkpoints(tmp_path_factory, writes, keep):
    tmp = tmp_path_factory.mktemp("v")
    batches = [(0, 4), (4, 8), (8, 12), (12, 13)]
    a = VertexArray(str(tmp), "a", "<i8", batches, keep=keep).create(0)
    model = np.zeros(13, dtype=np.int64)
    for c, (b, v) in enumerate(writes, start=1):
        lo, hi = batches[b]
        a.begin_call()
        a.write_batch_cow(b, np.full(hi - lo, v))
        a.commit(c)
        a.gc()
        model[lo:hi] = v
        assert len(a.checkpoints) <= keep
        assert a.store.live_bytes() <= keep * 13 * 8
        for bid, blk in a.store.blocks.items():
            assert blk.refs == sum(bid in ids for ids in a.checkpoints.values())
    assert a.read_all().tolist() == model.tolist()


def test_journal(tmp_path):
    j = RunJournal(str(tmp_path / "j"))
    assert j.last_ordinal == 0
    j.append(1, "edges", {"a": 1}, 3)
    j.append(2, "vertices", {}, 0.1)
    with pytest.raises(StateError):
        j.append(2, "edges", {}, 0)
    j2 = RunJournal(str(tmp_path / "j"))
    assert j2.last_ordinal == 2
    assert j2.value_of(1) == 3 and j2.value_of(2) == 0.1
