import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from galn.geom import (LabeledCloud, farthest_point_sample, knn, num_centroids, read_cloud,
                       sample_blocks, write_cloud)

from oracles import exhaustive_knn, greedy_maximin

coords = st.floats(-50, 50, allow_nan=False, width=64)


def cloud_of(points, labels=None, c=4):
    return LabeledCloud(np.asarray(points, float), None if labels is None else np.asarray(labels), "source", c)


# -- LabeledCloud -------------------------------------------------------------

def test_cloud_validation():
    with pytest.raises(ValueError):
        cloud_of(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        cloud_of(np.zeros((2, 3)), [0, 4], c=4)
    with pytest.raises(ValueError):
        cloud_of(np.zeros((2, 3)), [0])
    assert cloud_of(np.zeros((2, 3)), [0, 1]).unlabeled().labels is None


# -- sample_blocks ------------------------------------------------------------

def test_single_point_is_repeated():
    blocks = sample_blocks(cloud_of([[1.0, 2.0, 3.0]], [1]), 15.0, 4, rng_seed=0)
    assert len(blocks) == 1
    b = blocks[0]
    assert b.source_indices.tolist() == [0, 0, 0, 0]
    assert b.labels.tolist() == [1, 1, 1, 1]


def test_two_cells_two_blocks():
    pts = [[0.5, 0.5, 0.0], [15.5, 0.5, 0.0]]
    assert len(sample_blocks(cloud_of(pts), 15.0, 8, rng_seed=0)) == 2


def test_uniform_cloud_four_cells():
    rng = np.random.default_rng(7)
    pts = np.column_stack([rng.uniform(0, 30, (10_000, 2)), rng.uniform(0, 3, 10_000)])
    cells = np.floor(pts[:, :2] / 15.0).astype(int)
    keys, direct = np.unique(cells, axis=0, return_counts=True)
    per_cell = {tuple(k): int(c) for k, c in zip(keys, direct)}
    blocks = sample_blocks(cloud_of(pts), 15.0, 4096, rng_seed=1)
    assert len(blocks) == 4 == len(per_cell)
    assert all(2300 < n < 2700 for n in direct)
    for b in blocks:
        # every parent point of an under-populated cell kept, the rest resampled
        cell = (int(b.origin[0] // 15), int(b.origin[1] // 15))
        assert len(b) == 4096
        assert len(np.unique(b.source_indices)) == per_cell[cell]


def test_blocks_are_recentred():
    pts = np.array([[16.0, 31.0, 2.0], [17.0, 32.0, 1.0]])
    (b,) = sample_blocks(cloud_of(pts), 15.0, 2, rng_seed=0)
    np.testing.assert_allclose(b.origin, [15.0, 30.0, 0.0])
    np.testing.assert_allclose(b.points + b.origin, pts[b.source_indices])


def test_cover_all_visits_every_point():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 14, (1000, 3))
    blocks = sample_blocks(cloud_of(pts), 15.0, 128, rng_seed=0, cover_all=True)
    seen = np.unique(np.concatenate([b.source_indices for b in blocks]))
    assert seen.tolist() == list(range(1000))
    assert all(len(b) == 128 for b in blocks)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)), elements=st.floats(0, 40)),
       st.integers(1, 32), st.integers(0, 2**31))
def test_label_fidelity_and_size(pts, ppb, seed):
    labels = np.arange(len(pts)) % 4
    cloud = cloud_of(pts, labels)
    for b in sample_blocks(cloud, 15.0, ppb, rng_seed=seed):
        assert len(b) == ppb
        np.testing.assert_array_equal(b.labels, cloud.labels[b.source_indices])


def test_sample_blocks_deterministic():
    rng = np.random.default_rng(0)
    cloud = cloud_of(rng.uniform(0, 30, (500, 3)))
    a = sample_blocks(cloud, 15.0, 64, rng_seed=5)
    b = sample_blocks(cloud, 15.0, 64, rng_seed=5)
    assert all(np.array_equal(x.source_indices, y.source_indices) for x, y in zip(a, b))


# -- farthest point sampling --------------------------------------------------

def test_fps_single_pick():
    assert farthest_point_sample(np.random.default_rng(0).normal(size=(5, 3)), 1, start=3).tolist() == [3]


def test_fps_collinear_tie_breaks_low():
    pts = np.column_stack([np.arange(8.0), np.zeros(8), np.zeros(8)])
    assert farthest_point_sample(pts, 3, start=0).tolist() == [0, 7, 3]


def test_fps_rejects_bad_m():
    with pytest.raises(ValueError):
        farthest_point_sample(np.zeros((3, 3)), 4)
    with pytest.raises(ValueError):
        farthest_point_sample(np.zeros((3, 3)), 0)


def test_fps_matches_exhaustive_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(1, 65))
        m = int(rng.integers(1, min(n, 8) + 1))
        # a coarse grid makes ties common, exercising the tie rule
        pts = rng.integers(0, 4, size=(n, 3)).astype(float) if rng.random() < 0.3 else rng.normal(size=(n, 3))
        start = int(rng.integers(0, n))
        assert farthest_point_sample(pts, m, start).tolist() == greedy_maximin(pts, m, start)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=coords))
def test_fps_full_is_permutation(pts):
    out = farthest_point_sample(pts, len(pts))
    assert sorted(out.tolist()) == list(range(len(pts)))


@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.just(2)), elements=coords, unique=True))
def test_fps_radius_non_increasing(pts):
    order = farthest_point_sample(pts, len(pts))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    radii = [d[np.ix_(order[:m], order[:m])][np.triu_indices(m, 1)].min() for m in range(2, len(pts) + 1)]
    assert all(b <= a + 1e-12 for a, b in zip(radii, radii[1:]))


# -- knn ----------------------------------------------------------------------

def test_knn_self_match():
    pool = np.random.default_rng(0).normal(size=(10, 3))
    idx, dist = knn(pool[[4]], pool, 1)
    assert idx.tolist() == [[4]] and dist.tolist() == [[0.0]]


def test_knn_line():
    pool = np.array([[0.0], [1.0], [10.0]])
    idx, dist = knn(np.array([[0.4]]), pool, 2)
    assert idx.tolist() == [[0, 1]]
    np.testing.assert_allclose(dist, [[0.4, 0.6]])


def test_knn_matches_exhaustive_oracle():
    rng = np.random.default_rng(99)
    for trial in range(100):
        n = int(rng.integers(1, 200))
        d = int(rng.integers(1, 9))
        pool = rng.normal(size=(n, d)) if trial % 3 else rng.integers(0, 3, (n, d)).astype(float)
        q = rng.normal(size=(int(rng.integers(1, 21)), d))
        k = int(rng.integers(1, n + 1))
        idx, dist = knn(q, pool, k)
        oi, od = exhaustive_knn(q, pool, k)
        np.testing.assert_array_equal(idx, oi)
        np.testing.assert_allclose(dist, od, atol=1e-12)


def test_knn_random_200x8():
    rng = np.random.default_rng(5)
    pool, q = rng.normal(size=(200, 8)), rng.normal(size=(20, 8))
    idx, dist = knn(q, pool, 16)
    oi, od = exhaustive_knn(q, pool, 16)
    np.testing.assert_array_equal(idx, oi)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=coords),
       st.integers(1, 40))
def test_knn_sorted_and_exact(pool, k):
    k = min(k, len(pool))
    q = pool[: max(1, len(pool) // 2)] + 0.25
    idx, dist = knn(q, pool, k)
    assert np.all(np.diff(dist, axis=1) >= 0)
    recomputed = np.sqrt(((q[:, None, :] - pool[idx]) ** 2).sum(-1))
    np.testing.assert_allclose(dist, recomputed, atol=1e-12, rtol=0)


def test_knn_rejects_k_too_large():
    with pytest.raises(ValueError):
        knn(np.zeros((1, 3)), np.zeros((2, 3)), 3)


# -- cloud files --------------------------------------------------------------

def test_cloud_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    cloud = LabeledCloud(rng.normal(size=(50, 3)), rng.integers(0, 4, 50), "target", 4)
    write_cloud(tmp_path / "c.txt", cloud)
    back = read_cloud(tmp_path / "c.txt")
    assert back.points.tobytes() == cloud.points.tobytes()
    assert back.labels.tolist() == cloud.labels.tolist()
    assert (back.domain_tag, back.num_classes) == ("target", 4)
    assert (tmp_path / "c.txt").read_text().startswith("#domain target #classes 4\n")


def test_cloud_file_unlabeled(tmp_path):
    write_cloud(tmp_path / "u.txt", LabeledCloud(np.ones((3, 3)), None, "source", 4))
    assert read_cloud(tmp_path / "u.txt").labels is None


def test_cloud_file_rejects_mixed_lines(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("#domain source #classes 4\n0 0 0 1\n1 1 1\n")
    with pytest.raises(ValueError, match="mixed"):
        read_cloud(p)


def test_cloud_file_rejects_missing_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 0 0 1\n")
    with pytest.raises(ValueError, match="header"):
        read_cloud(p)


@pytest.mark.parametrize("n, expected", [(1, 1), (64, 1), (65, 2), (4096, 64), (512, 8)])
def test_num_centroids(n, expected):
    assert num_centroids(n) == expected
