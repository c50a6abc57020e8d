"""Synthetic scene generation for the benchmark harness."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .pose import RigidTransform, random_rotation

__all__ = ["SceneSpec", "generate_scene", "measure_overlap"]

GENERATORS = ("random-surface", "planes-and-boxes", "shell-scan")


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "planes-and-boxes"
    n_points: int = 5000
    overlap: float = 0.7
    noise_sigma: float = 0.01
    outlier_fraction: float = 0.1
    max_angle_deg: float = 60.0
    max_translation: float = 5.0
    extent: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown generator '{self.kind}'")
        if not 0.0 < self.overlap <= 1.0:
            raise ValueError("overlap fraction must be in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier fraction must be in [0, 1)")


def _random_surface(rng, n, extent):
    xy = rng.uniform(0.0, extent, size=(n, 2))
    n_bumps = 40
    centers = rng.uniform(0.0, extent, size=(n_bumps, 2))
    amps = rng.uniform(-1.5, 1.5, size=n_bumps)
    widths = rng.uniform(0.6, 2.0, size=n_bumps)
    d2 = ((xy[:, None, :] - centers[None]) ** 2).sum(axis=2)
    z = (amps[None] * np.exp(-d2 / (2.0 * widths[None] ** 2))).sum(axis=1)
    return np.column_stack([xy, z])


def _box_surface_points(rng, n, size, origin, yaw):
    # sample box faces proportionally to their area
    areas = np.array(
        [size[1] * size[2], size[1] * size[2], size[0] * size[2],
         size[0] * size[2], size[0] * size[1], size[0] * size[1]]
    )
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(0.0, 1.0, size=(n, 3)) * size
    for axis in range(3):
        lo, hi = 2 * axis, 2 * axis + 1
        pts[faces == lo, axis] = 0.0
        pts[faces == hi, axis] = size[axis]
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return pts @ rot.T + origin


def _planes_and_boxes(rng, n, extent):
    n_ground = int(0.4 * n)
    ground = np.column_stack(
        [rng.uniform(0.0, extent, size=(n_ground, 2)), np.zeros(n_ground)]
    )
    n_boxes = 10
    remaining = n - n_ground
    per_box = np.full(n_boxes, remaining // n_boxes)
    per_box[: remaining % n_boxes] += 1
    parts = [ground]
    for count in per_box:
        size = rng.uniform(0.6, 2.5, size=3)
        origin = np.array([*rng.uniform(0.0, extent - 2.5, size=2), 0.0])
        parts.append(_box_surface_points(rng, count, size, origin, rng.uniform(0, 2 * np.pi)))
    return np.vstack(parts)


def _shell_scan(rng, n, extent):
    radius = extent / 2.0
    center = np.array([extent / 2.0, extent / 2.0, 0.0])
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    phi = np.arccos(rng.uniform(0.0, 1.0, size=n))  # upper hemisphere
    r = radius * (1.0 + 0.05 * np.sin(4 * theta) * np.cos(3 * phi))
    pts = np.column_stack(
        [r * np.sin(phi) * np.cos(theta), r * np.sin(phi) * np.sin(theta), r * np.cos(phi)]
    )
    return pts + center


_KIND_FN = {
    "random-surface": _random_surface,
    "planes-and-boxes": _planes_and_boxes,
    "shell-scan": _shell_scan,
}


def measure_overlap(src: PointCloud, dst: PointCloud, gt: RigidTransform, radius):
    """Fraction of source points with a target point within ``radius`` under gt."""
    moved = gt.apply(src.points)
    tree = cKDTree(dst.points)
    dist, _ = tree.query(moved, k=1)
    return float(np.mean(dist <= radius))


def generate_scene(spec: SceneSpec):
    """Deterministic synthetic pair: (source, target, gt source->target).

    The target is a directional crop of the source holding the requested
    overlap fraction, mapped by a random rigid transform, perturbed with
    isotropic Gaussian noise, and contaminated with uniform-box outliers.
    """
    rng = np.random.default_rng(spec.seed)
    src_pts = _KIND_FN[spec.kind](rng, spec.n_points, spec.extent)

    # directional crop retaining the requested fraction of source points
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    proj = src_pts @ direction
    threshold = np.quantile(proj, 1.0 - spec.overlap)
    crop = src_pts[proj >= threshold]
    if len(crop) < 10:
        raise ValueError("crop left too few points for the requested overlap")

    rotation = random_rotation(rng, spec.max_angle_deg)
    translation = rng.normal(size=3)
    translation *= rng.uniform(0, spec.max_translation) / np.linalg.norm(translation)
    gt = RigidTransform(rotation, translation)

    dst_pts = gt.apply(crop)
    if spec.noise_sigma > 0:
        # both scans carry independent sensor noise; the truth transform
        # relates the noiseless geometry
        src_pts = src_pts + rng.normal(0.0, spec.noise_sigma, size=src_pts.shape)
        dst_pts = dst_pts + rng.normal(0.0, spec.noise_sigma, size=dst_pts.shape)
    if spec.outlier_fraction > 0:
        n_out = int(round(spec.outlier_fraction * len(dst_pts)))
        lo = dst_pts.min(axis=0)
        hi = dst_pts.max(axis=0)
        outliers = rng.uniform(lo, hi, size=(n_out, 3))
        dst_pts = np.vstack([dst_pts, outliers])
        order = rng.permutation(len(dst_pts))
        dst_pts = dst_pts[order]

    return PointCloud(src_pts), PointCloud(dst_pts), gt
