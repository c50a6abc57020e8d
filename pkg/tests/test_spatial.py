import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from castreg.cloud import PointCloud, voxel_downsample
from castreg.spatial import SpatialIndex


def brute_knn(points, query, k):
    dist = np.linalg.norm(points - query, axis=1)
    order = np.lexsort((np.arange(len(points)), dist))[:k]
    return order, dist[order]


def brute_radius(points, query, radius):
    dist = np.linalg.norm(points - query, axis=1)
    keep = np.flatnonzero(dist < radius)
    order = np.lexsort((keep, dist[keep]))
    return keep[order], dist[keep][order]


def test_knn_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pts = rng.normal(size=(int(rng.integers(5, 80)), 3))
        index = SpatialIndex(pts)
        query = rng.normal(size=3)
        k = int(rng.integers(1, len(pts) + 1))
        idx, dist = index.knn(query, k)
        bidx, bdist = brute_knn(pts, query, k)
        np.testing.assert_array_equal(idx, bidx)
        np.testing.assert_allclose(dist, bdist)


def test_knn_deterministic_ties():
    # 8 cube corners are equidistant from the center: ties break by index
    pts = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    index = SpatialIndex(pts)
    idx, _ = index.knn(np.full(3, 0.5), 4)
    np.testing.assert_array_equal(idx, [0, 1, 2, 3])


def test_radius_search_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(100):
        pts = rng.uniform(-1, 1, size=(int(rng.integers(5, 60)), 3))
        index = SpatialIndex(pts)
        query = rng.uniform(-1, 1, 3)
        radius = float(rng.uniform(0.2, 1.5))
        idx, dist = index.radius_search(query, radius)
        bidx, bdist = brute_radius(pts, query, radius)
        np.testing.assert_array_equal(idx, bidx)
        np.testing.assert_allclose(dist, bdist)


def test_radius_is_strict():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    index = SpatialIndex(pts)
    idx, _ = index.radius_search(np.zeros(3), 1.0)
    np.testing.assert_array_equal(idx, [0])  # boundary point excluded


def test_knn_batch_agrees_with_knn_off_boundary():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(50, 3))
    index = SpatialIndex(pts)
    queries = rng.normal(size=(20, 3))
    bidx, _ = index.knn_batch(queries, 5)
    for q, row in zip(queries, bidx):
        idx, _ = index.knn(q, 5)
        np.testing.assert_array_equal(row, idx)


def test_voxel_downsample_oracle():
    rng = np.random.default_rng(3)
    for _ in range(100):
        pts = rng.uniform(-2, 2, size=(int(rng.integers(4, 100)), 3))
        voxel = float(rng.uniform(0.3, 1.5))
        down = voxel_downsample(PointCloud(pts), voxel)
        # oracle: group by floor(p / voxel) keyed in first-occurrence order
        keys = np.floor(pts / voxel).astype(np.int64)
        seen = {}
        for p, key in zip(pts, map(tuple, keys)):
            seen.setdefault(key, []).append(p)
        expected = np.array([np.mean(group, axis=0) for group in seen.values()])
        assert len(down) == len(expected)
        np.testing.assert_allclose(down.points, expected, atol=1e-12)


def test_voxel_downsample_averages_features():
    pts = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [5.0, 5.0, 5.0]])
    feats = np.array([[1.0], [3.0], [7.0]])
    down = voxel_downsample(PointCloud(pts, feats), 1.0)
    np.testing.assert_allclose(down.features, [[2.0], [7.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_knn_property(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(int(rng.integers(3, 40)), 3))
    index = SpatialIndex(pts)
    query = rng.normal(size=3)
    k = int(rng.integers(1, len(pts) + 1))
    idx, dist = index.knn(query, k)
    assert len(idx) == k
    assert np.all(np.diff(dist) >= 0)
    bidx, _ = brute_knn(pts, query, k)
    np.testing.assert_array_equal(idx, bidx)


def test_empty_and_invalid_inputs():
    with pytest.raises(ValueError):
        SpatialIndex(np.zeros((3, 2)))
    index = SpatialIndex(np.random.default_rng(0).normal(size=(5, 3)))
    with pytest.raises(ValueError):
        index.knn(np.zeros(3), 0)
