import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmcomm import comm_graph as cg
from swarmcomm.comm_graph import CommMode, DropoutSchedule


def test_unrestricted_all_true():
    mask = cg.build_adjacency(np.random.default_rng(0).normal(size=(3, 2)))
    assert mask.shape == (3, 3) and mask.all()


def test_restricted_threshold():
    mask = cg.build_adjacency(np.array([[0.0, 0.0], [1.5, 0.0]]), CommMode(1.0))
    np.testing.assert_array_equal(mask, np.eye(2, dtype=bool))
    # exactly R counts as connected
    assert cg.build_adjacency(np.array([[0.0, 0.0], [1.0, 0.0]]), CommMode(1.0)).all()


def test_restricted_chain():
    mask = cg.build_adjacency(np.array([[0.0, 0.0], [0.9, 0.0], [1.8, 0.0]]), CommMode(1.0))
    expected = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)
    np.testing.assert_array_equal(mask, expected)


def test_batch_adjacency_matches_single():
    pos = np.random.default_rng(1).uniform(-2, 2, size=(16, 5, 2))
    batched = cg.batch_adjacency(pos, CommMode(2.0))
    for k in range(16):
        np.testing.assert_array_equal(batched[k], cg.build_adjacency(pos[k], CommMode(2.0)))


def test_bad_radius():
    with pytest.raises(ValueError):
        CommMode(0.0)


def count_dropped(before, after):
    assert np.array_equal(after, after.T), "dropout result must stay symmetric"
    assert after.diagonal().all(), "self-edges are never dropped"
    assert not np.any(after & ~before), "dropout never adds edges"
    return int(np.triu(before & ~after, k=1).sum())


def test_dropout_zero_fraction_is_identity():
    mask = np.ones((5, 5), dtype=bool)
    sched = DropoutSchedule(np.random.default_rng(0), drop_fraction=0.0)
    np.testing.assert_array_equal(cg.apply_dropout(mask, sched, 0), mask)


def test_dropout_example_m4():
    mask = np.ones((4, 4), dtype=bool)
    out = cg.apply_dropout(mask, DropoutSchedule(np.random.default_rng(0), 0.5), 0)
    assert count_dropped(mask, out) == 3


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.sampled_from([0.1, 0.25, 0.5, 0.75, 0.9]), st.integers(0, 10_000))
def test_dropout_count_is_floor_pe(m, p, seed):
    mask = np.ones((m, m), dtype=bool)
    sched = DropoutSchedule(np.random.default_rng(seed), drop_fraction=p)
    e = m * (m - 1) // 2
    for t in range(25):
        assert count_dropped(mask, cg.apply_dropout(mask, sched, t)) == math.floor(p * e)


def test_dropout_constant_within_period_then_resampled():
    m = 8
    mask = np.ones((m, m), dtype=bool)
    sched = DropoutSchedule(np.random.default_rng(3), 0.5, resample_period=10)
    seen = [cg.apply_dropout(mask, sched, t) for t in range(40)]
    for block in range(4):
        first = seen[10 * block]
        for t in range(10 * block, 10 * block + 10):
            np.testing.assert_array_equal(seen[t], first)
    # with 28 edges and 14 dropped, an identical redraw is essentially impossible
    assert not np.array_equal(seen[9], seen[10])
    assert not np.array_equal(seen[19], seen[20])


def test_dropout_restricted_mask_uses_current_edges():
    rng = np.random.default_rng(4)
    sched = DropoutSchedule(rng, 0.5)
    for t in range(30):
        pos = rng.uniform(-2, 2, size=(6, 2))
        mask = cg.build_adjacency(pos, CommMode(2.0))
        e = len(cg.undirected_edges(mask))
        assert count_dropped(mask, cg.apply_dropout(mask, sched, t)) == math.floor(0.5 * e)


def test_dropout_same_seed_same_draw():
    mask = np.ones((6, 6), dtype=bool)
    a = DropoutSchedule(np.random.default_rng(9), 0.5)
    b = DropoutSchedule(np.random.default_rng(9), 0.5)
    np.testing.assert_array_equal(cg.apply_dropout(mask, a, 0), cg.apply_dropout(mask, b, 0))


def test_components_examples():
    assert cg.connected_components(np.ones((4, 4), dtype=bool)) == [[0, 1, 2, 3]]
    assert cg.connected_components(np.eye(4, dtype=bool)) == [[0], [1], [2], [3]]
    chain = np.eye(4, dtype=bool)
    chain[0, 1] = chain[1, 0] = chain[1, 2] = chain[2, 1] = True
    assert cg.connected_components(chain) == [[0, 1, 2], [3]]


def test_graph_distances_chain():
    m = 5
    chain = np.eye(m, dtype=bool)
    for i in range(m - 1):
        chain[i, i + 1] = chain[i + 1, i] = True
    d = cg.graph_distances(chain)
    np.testing.assert_array_equal(d, np.abs(np.arange(m)[:, None] - np.arange(m)[None, :]))
    assert cg.graph_distances(np.eye(2, dtype=bool))[0, 1] == -1
