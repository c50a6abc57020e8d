"""Point cloud container and voxel-grid down-sampling."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .validation import as_features, as_points

__all__ = ["PointCloud", "voxel_downsample"]


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points with optional per-point features.

    Feature row i describes point i; the row counts must agree.
    """

    points: np.ndarray
    features: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        pts = as_points(self.points)
        object.__setattr__(self, "points", pts)
        if self.features is not None:
            feats = as_features(self.features, len(pts))
            object.__setattr__(self, "features", feats)

    def __len__(self):
        return self.points.shape[0]

    def with_features(self, features):
        return PointCloud(self.points, features)

    def transformed(self, transform):
        """Return a copy with points mapped by a RigidTransform."""
        return PointCloud(transform.apply(self.points), self.features)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Down-sample by averaging all points that fall into a common voxel.

    Each non-empty voxel of edge length ``voxel_size`` contributes the
    centroid of its members. Features, when present, are averaged the same
    way. Output order follows the first occurrence of each voxel.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pts = cloud.points
    if len(pts) == 0:
        return PointCloud(np.empty((0, 3)), cloud.features)

    keys = np.floor(pts / voxel_size).astype(np.int64)
    # unique voxel ids, keeping first-occurrence order
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    groups = rank[inverse]

    n_vox = len(first)
    counts = np.bincount(groups, minlength=n_vox).astype(np.float64)
    centroids = np.zeros((n_vox, 3))
    for axis in range(3):
        centroids[:, axis] = np.bincount(groups, weights=pts[:, axis], minlength=n_vox)
    centroids /= counts[:, None]

    features = None
    if cloud.features is not None:
        features = np.zeros((n_vox, cloud.features.shape[1]))
        for col in range(cloud.features.shape[1]):
            features[:, col] = np.bincount(
                groups, weights=cloud.features[:, col], minlength=n_vox
            )
        features /= counts[:, None]
    return PointCloud(centroids, features)
