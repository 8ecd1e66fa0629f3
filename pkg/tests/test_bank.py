import numpy as np
import pytest
from hypothesis import given, strategies as st

from galn.bank import GraphBank
from galn.graphs import FeatureGraph
from galn.numcore import Tensor

LAYOUT = ((1, 3), (2, 4))


def graph(label, value=0.0, tag=0, layout=LAYOUT):
    levels = [Tensor(np.full(shape, value, dtype=float)) for shape in layout]
    return FeatureGraph(tag, label, levels)


def random_graph(rng, label, tag=0):
    return FeatureGraph(tag, label, [Tensor(rng.normal(size=s)) for s in LAYOUT])


def tags(slot):
    return [e.graph.centroid_block_index for e in slot]


def test_first_insert():
    bank = GraphBank(4, 16)
    bank.insert(graph(2))
    assert bank.counts() == [0, 0, 1, 0]


def test_seventeen_inserts_evict_first():
    bank = GraphBank(4, 16)
    for i in range(1, 18):
        bank.insert(graph(1, tag=i))
    snap = bank.snapshot()
    assert bank.counts()[1] == 16
    assert tags(snap[1]) == list(range(2, 18))
    assert [len(s) for s in snap] == [0, 16, 0, 0]


def test_interleaved_categories_keep_their_own_order():
    bank = GraphBank(3, 4)
    log = {0: [], 1: [], 2: []}
    rng = np.random.default_rng(0)
    for i in range(40):
        c = int(rng.integers(0, 3))
        bank.insert(graph(c, tag=i))
        log[c].append(i)
    for c, slot in enumerate(bank.snapshot()):
        assert tags(slot) == log[c][-4:]
        counters = [e.counter for e in slot]
        assert counters == sorted(counters) and len(set(counters)) == len(counters)


def test_snapshot_empty_and_pure():
    bank = GraphBank(5, 16)
    assert bank.snapshot() == ((),) * 5
    bank.insert(graph(0))
    assert bank.snapshot() == bank.snapshot()


def test_rejections():
    bank = GraphBank(3, 2)
    with pytest.raises(ValueError):
        bank.insert(graph(None))
    with pytest.raises(ValueError):
        bank.insert(graph(3))
    bank.insert(graph(0))
    with pytest.raises(ValueError, match="differ"):
        bank.insert(graph(1, layout=((1, 3), (3, 4))))
    with pytest.raises(ValueError):
        GraphBank(0, 16)


def test_stored_graphs_are_detached_copies():
    bank = GraphBank(2, 4)
    g = FeatureGraph(0, 1, [Tensor(np.ones(s), requires_grad=True) for s in LAYOUT])
    bank.insert(g)
    stored = bank.snapshot()[1][0].graph
    assert stored is not g and all(not t.requires_grad for t in stored.levels)
    g.levels[0].values[:] = 7.0
    assert stored.levels[0].values[0, 0] == 1.0


def test_category_mean_of_one_graph():
    rng = np.random.default_rng(1)
    bank = GraphBank(3, 4)
    g = random_graph(rng, 1)
    bank.insert(g)
    means, mask = bank.category_means()
    assert mask.tolist() == [False, True, False]
    np.testing.assert_array_equal(means[1], g.mean_feature())
    assert means.shape == (3, 3 + 4)


def test_category_mean_cancels():
    rng = np.random.default_rng(2)
    g = random_graph(rng, 0)
    neg = FeatureGraph(1, 0, [Tensor(-t.values) for t in g.levels])
    bank = GraphBank(2, 4)
    bank.insert(g)
    bank.insert(neg)
    np.testing.assert_allclose(bank.category_means()[0][0], 0.0, atol=1e-15)


def test_category_means_flat_oracle():
    rng = np.random.default_rng(3)
    bank = GraphBank(3, 8)
    kept = {c: [] for c in range(3)}
    for c in range(3):
        for _ in range(5):
            g = random_graph(rng, c)
            bank.insert(g)
            kept[c].append(g)
    means, _ = bank.category_means()
    for c in range(3):
        flat = []
        for j in range(len(LAYOUT)):
            rows = [row for g in kept[c] for row in g.levels[j].values]
            flat.extend(np.mean(rows, axis=0))
        np.testing.assert_allclose(means[c], flat, atol=1e-12)


def test_stacked_layout():
    bank = GraphBank(3, 4)
    assert bank.stacked() is None
    for c, v in [(2, 1.0), (0, 2.0), (2, 3.0)]:
        bank.insert(graph(c, v))
    s = bank.stacked()
    assert s.categories.tolist() == [0, 2, 2]
    assert s.ages.tolist() == [0, 0, 1]
    assert [lvl.shape for lvl in s.levels] == [(3, 1, 3), (3, 2, 4)]
    assert s.levels[0][:, 0, 0].tolist() == [2.0, 1.0, 3.0]
    assert bank.stacked() is s
    bank.insert(graph(1))
    assert bank.stacked() is not s


@given(st.lists(st.integers(0, 5), max_size=300), st.integers(1, 16))
def test_capacity_and_fifo_property(stream, capacity):
    bank = GraphBank(6, capacity)
    log = []
    for i, c in enumerate(stream):
        before = {c2: tags(s) for c2, s in enumerate(bank.snapshot())}
        bank.insert(graph(c, tag=i))
        after = tags(bank.snapshot()[c])
        if len(before[c]) == capacity:
            # the evicted graph is the oldest of its own category
            assert after == before[c][1:] + [i]
        log.append((c, i))
        assert max(bank.counts()) <= capacity
    for c, slot in enumerate(bank.snapshot()):
        assert tags(slot) == [i for c2, i in log if c2 == c][-capacity:]
        assert all(e.graph.centroid_label == c for e in slot)


@given(st.lists(st.integers(0, 2), min_size=1, max_size=40), st.integers(0, 2**31))
def test_means_survive_snapshot_rebuild(stream, seed):
    rng = np.random.default_rng(seed)
    bank = GraphBank(3, 5)
    for c in stream:
        bank.insert(random_graph(rng, c))
    rebuilt = GraphBank.from_snapshot(bank.snapshot(), 5)
    m1, p1 = bank.category_means()
    m2, p2 = rebuilt.category_means()
    assert np.array_equal(p1, p2) and m1.tobytes() == m2.tobytes()
