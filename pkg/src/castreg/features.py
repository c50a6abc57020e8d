"""Handcrafted multi-resolution descriptors.

Each pyramid level is a voxel down-sampled node set; per-node descriptors
combine covariance eigenvalue shape statistics at two neighborhood scales
with the local normal, height, and density, mapped to a fixed width by a
seeded random projection and L2-normalized. The normal and height entries
make the descriptors rotation-variant by design; all other statistics are
invariant to rigid motion of the input.
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, voxel_downsample

__all__ = ["FeaturePyramid", "local_shape_stats", "handcrafted_features"]

LEVELS = ("half", "quarter", "eighth")


@dataclass(frozen=True)
class FeaturePyramid:
    """Node coordinates + features per level, with finer-to-coarser parent maps."""

    points: Dict[str, np.ndarray]
    features: Dict[str, np.ndarray]
    parents: Dict[str, np.ndarray]  # "half"->quarter indices, "quarter"->eighth indices

    def level(self, name):
        return self.points[name], self.features[name]


def local_shape_stats(neighborhood, center):
    """Eigenvalue shape statistics of one neighborhood.

    Returns a dict with the sorted normalized eigenvalues (e1 >= e2 >= e3),
    derived shape scores, the unit normal (smallest-eigenvector, oriented
    to non-negative z), and the centroid offset from ``center``.
    """
    pts = np.asarray(neighborhood, dtype=np.float64)
    centroid = pts.mean(axis=0)
    diff = pts - centroid
    cov = diff.T @ diff / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals[::-1], 0.0)  # descending
    evecs = evecs[:, ::-1]
    total = evals.sum()
    e = evals / total if total > 0 else np.array([1 / 3, 1 / 3, 1 / 3])
    e1, e2, e3 = e
    eps = 1e-12
    normal = evecs[:, 2]
    if normal[2] < 0 or (normal[2] == 0 and (normal[0] < 0 or (normal[0] == 0 and normal[1] < 0))):
        normal = -normal
    entropy = -np.sum(e * np.log(np.maximum(e, eps)))
    return {
        "e1": e1,
        "e2": e2,
        "e3": e3,
        "linearity": (e1 - e2) / max(e1, eps),
        "planarity": (e2 - e3) / max(e1, eps),
        "sphericity": e3 / max(e1, eps),
        "omnivariance": float(np.cbrt(max(e1 * e2 * e3, 0.0))),
        "anisotropy": (e1 - e3) / max(e1, eps),
        "eigenentropy": float(entropy),
        "curvature": e3,
        "normal": normal,
        "offset": centroid - np.asarray(center, dtype=np.float64),
    }


_SHAPE_KEYS = (
    "e1", "e2", "e3", "linearity", "planarity", "sphericity",
    "omnivariance", "anisotropy", "eigenentropy", "curvature",
)


def _batch_shape_stats(nodes, member, dist, in_radius, radius, n_bins=8):
    """Vectorized shape statistics of capped radius neighborhoods.

    ``member``/``dist`` hold the (n, k) nearest dense points per node in
    nearest-first order; ``in_radius`` marks the members within ``radius``.
    Nearest-first ordering means the masked subset equals a direct
    radius-bounded query, so the statistics stay covariant with rigid
    motion of the dense cloud. Returns (stats (n, 10), radial histogram
    (n, n_bins), offset_norms (n,), counts (n,), normals (n, 3)).
    """
    k_min = min(4, member.shape[1])
    valid = in_radius.copy()
    # guarantee at least the 4 nearest members so the covariance is defined
    valid[:, :k_min] = True
    w = valid.astype(np.float64)
    counts = w.sum(axis=1)
    centroid = (w[:, :, None] * member).sum(axis=1) / counts[:, None]
    diff = (member - centroid[:, None, :]) * w[:, :, None]
    cov = np.einsum("nki,nkj->nij", diff, diff) / counts[:, None, None]
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals[:, ::-1], 0.0)  # descending
    normals = evecs[:, :, 0]
    flip = normals[:, 2] < 0
    normals[flip] *= -1.0

    total = evals.sum(axis=1)
    e = evals / np.maximum(total, 1e-300)[:, None]
    e[total <= 0] = 1.0 / 3.0
    e1, e2, e3 = e[:, 0], e[:, 1], e[:, 2]
    eps = 1e-12
    safe1 = np.maximum(e1, eps)
    entropy = -np.sum(e * np.log(np.maximum(e, eps)), axis=1)
    stats = np.column_stack([
        e1, e2, e3,
        (e1 - e2) / safe1,
        (e2 - e3) / safe1,
        e3 / safe1,
        np.cbrt(np.maximum(e1 * e2 * e3, 0.0)),
        (e1 - e3) / safe1,
        entropy,
        e3,
    ])
    offset_norms = np.linalg.norm(centroid - np.asarray(nodes), axis=1)
    # radial distance histogram: fraction of members per equal-width shell
    dn = np.where(valid, dist, np.nan) / radius
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    with np.errstate(invalid="ignore"):
        hist = np.stack(
            [np.nanmean((dn >= lo) & (dn < hi), axis=1) for lo, hi in zip(edges[:-1], edges[1:])],
            axis=1,
        )
    hist = np.nan_to_num(hist)
    return stats, hist, offset_norms, counts, normals


_N_BINS = 8
_DENSITY_WEIGHT = 0.3  # damp the log-density term so shape statistics dominate


def _level_raw_descriptors(nodes, dense, radii, z_floor, pose_variant_weight, k_cap=64):
    """Raw per-node descriptors from dense-cloud neighborhoods at several scales.

    One capped nearest-first query at the largest radius serves every
    scale: the members within a smaller radius are exactly the leading
    masked entries, so per-scale statistics match independent queries.
    """
    tree = cKDTree(dense)
    n = len(nodes)
    k = min(k_cap, tree.n)
    dist, idx = tree.query(nodes, k=k, distance_upper_bound=max(radii))
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    in_max = np.isfinite(dist)
    k_min = min(4, tree.n)
    if np.any(idx[:, :k_min] >= tree.n):
        far_dist, near = tree.query(nodes, k=k_min)
        idx[:, :k_min] = np.atleast_2d(near)
        dist[:, :k_min] = np.atleast_2d(far_dist)
    member = dense[np.where(in_max | (np.arange(k) < k_min), idx, 0)]

    per_scale = len(_SHAPE_KEYS) + _N_BINS + 2  # stats + histogram + offset + density
    raw = np.zeros((n, per_scale * len(radii) + 4))
    for s, radius in enumerate(radii):
        stats, hist, off, counts, normals = _batch_shape_stats(
            nodes, member, dist, in_max & (dist <= radius), radius, _N_BINS
        )
        base = s * per_scale
        raw[:, base : base + len(_SHAPE_KEYS)] = stats
        raw[:, base + len(_SHAPE_KEYS) : base + len(_SHAPE_KEYS) + _N_BINS] = hist
        raw[:, base + per_scale - 2] = off / radius
        raw[:, base + per_scale - 1] = np.log1p(counts) * _DENSITY_WEIGHT
        if s == 0:
            raw[:, -4:-1] = normals * pose_variant_weight
    raw[:, -1] = (nodes[:, 2] - z_floor) * pose_variant_weight
    return raw


def handcrafted_features(
    cloud: PointCloud,
    voxel_size: float,
    dim: int = 128,
    seed: int = 0,
    radius_factor: float = 2.0,
    pose_variant_weight: float = 0.1,
) -> FeaturePyramid:
    """Build the three-level feature pyramid for one cloud.

    Levels use voxel sizes v, 2v, 4v; neighborhood radii scale with the
    level voxel (factors 1, 2 and 4 on the base radius). The random
    projection matrix depends only on ``seed`` and the raw descriptor
    width, so two calls on the same input are identical.
    """
    if len(cloud) == 0:
        raise ValueError("cannot build a pyramid from an empty cloud")
    points = {}
    for k, name in enumerate(LEVELS):
        level_cloud = voxel_downsample(cloud, voxel_size * (2**k))
        if len(level_cloud) < 3:
            raise ValueError(f"level '{name}' has fewer than 3 points")
        points[name] = level_cloud.points

    z_floor = cloud.points[:, 2].min()
    features = {}
    proj = None
    for k, name in enumerate(LEVELS):
        base_r = voxel_size * (2**k) * radius_factor
        raw = _level_raw_descriptors(
            points[name], cloud.points, (base_r, 2 * base_r, 4 * base_r),
            z_floor, pose_variant_weight,
        )
        if proj is None:
            rng = np.random.default_rng(seed)
            proj = rng.normal(0.0, 1.0 / np.sqrt(raw.shape[1]), size=(raw.shape[1], dim))
        feat = raw @ proj
        norms = np.linalg.norm(feat, axis=1, keepdims=True)
        features[name] = feat / np.maximum(norms, 1e-12)

    parents = {}
    for fine, coarse in (("half", "quarter"), ("quarter", "eighth")):
        tree = cKDTree(points[coarse])
        _, idx = tree.query(points[fine], k=1)
        parents[fine] = np.atleast_1d(idx).astype(np.int64)
    return FeaturePyramid(points=points, features=features, parents=parents)
