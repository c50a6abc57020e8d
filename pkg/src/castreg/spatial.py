"""Exact spatial index over a point cloud.

Backed by scipy's kd-tree; queries are exact and tie-broken by point index
so the outputs match a brute-force scan on every input.
"""

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .validation import as_vector3

__all__ = ["SpatialIndex"]


class SpatialIndex:
    """Immutable exact nearest-neighbor index over a PointCloud."""

    def __init__(self, cloud):
        if isinstance(cloud, PointCloud):
            pts = cloud.points
        else:
            pts = np.asarray(cloud, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("index requires an (n, 3) point array")
        self._points = pts.copy()
        self._points.setflags(write=False)
        self._tree = cKDTree(self._points) if len(pts) else None

    @property
    def points(self):
        return self._points

    def __len__(self):
        return len(self._points)

    def knn(self, query, k):
        """k nearest neighbors of ``query`` as (indices, distances).

        Returns exactly min(k, n) results sorted by non-decreasing distance,
        with exact-distance ties broken by the smaller point index.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if self._tree is None:
            raise ValueError("index is empty")
        q = as_vector3(query, "query")
        n = len(self._points)
        k_eff = min(k, n)
        dist, idx = self._tree.query(q, k=k_eff)
        dist = np.atleast_1d(dist)
        idx = np.atleast_1d(idx)
        if k_eff < n:
            # re-resolve possible ties at the k-th distance deterministically
            boundary = dist[-1]
            cand = self._tree.query_ball_point(q, boundary * (1 + 1e-12) + 1e-300)
            if len(cand) > k_eff:
                cand = np.asarray(cand)
                cd = np.linalg.norm(self._points[cand] - q, axis=1)
                order = np.lexsort((cand, cd))[:k_eff]
                idx, dist = cand[order], cd[order]
                return idx, dist
        order = np.lexsort((idx, dist))
        return idx[order], dist[order]

    def radius_search(self, query, radius):
        """All points with distance strictly below ``radius``, sorted ascending."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        if self._tree is None:
            raise ValueError("index is empty")
        q = as_vector3(query, "query")
        cand = np.asarray(self._tree.query_ball_point(q, radius), dtype=np.int64)
        if cand.size == 0:
            return cand, np.empty(0)
        dist = np.linalg.norm(self._points[cand] - q, axis=1)
        keep = dist < radius
        cand, dist = cand[keep], dist[keep]
        order = np.lexsort((cand, dist))
        return cand[order], dist[order]

    def knn_batch(self, queries, k):
        """Vectorized kNN for many queries; ties are not index-resolved.

        Used by throughput-sensitive pipeline stages where queries are
        generic (tie probability zero). Returns (m, k') indices/distances.
        """
        if self._tree is None:
            raise ValueError("index is empty")
        queries = np.asarray(queries, dtype=np.float64)
        k_eff = min(k, len(self._points))
        dist, idx = self._tree.query(queries, k=k_eff)
        if k_eff == 1:
            dist, idx = dist[:, None], idx[:, None]
        return idx, dist
