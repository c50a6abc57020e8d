"""Rigid transforms, correspondences, and the closed-form weighted solver."""

from dataclasses import dataclass

import numpy as np

from .validation import as_vector3

__all__ = [
    "RigidTransform",
    "Correspondence",
    "DegenerateConfigurationError",
    "weighted_kabsch",
    "random_rotation",
]

_ORTHO_TOL = 1e-9


class DegenerateConfigurationError(ValueError):
    """The correspondence set does not determine a unique rigid transform."""


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (proper orthogonal 3x3) plus translation, y = R x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation is not orthogonal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", as_vector3(self.translation, "translation"))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other):
        """self ∘ other: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self):
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def as_matrix(self):
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    @classmethod
    def from_matrix(cls, mat):
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return cls(mat[:3, :3], mat[:3, 3])


@dataclass(frozen=True)
class Correspondence:
    """A source/target point pair with a non-negative confidence weight."""

    source: np.ndarray
    target: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "source", as_vector3(self.source, "source"))
        object.__setattr__(self, "target", as_vector3(self.target, "target"))
        w = float(self.weight)
        if not np.isfinite(w) or w < 0:
            raise ValueError("weight must be finite and non-negative")
        object.__setattr__(self, "weight", w)


def _unpack(corrs):
    """Accept a list of Correspondence or (src, dst, weights) arrays."""
    if isinstance(corrs, tuple) and len(corrs) in (2, 3):
        src = np.asarray(corrs[0], dtype=np.float64)
        dst = np.asarray(corrs[1], dtype=np.float64)
        w = (
            np.asarray(corrs[2], dtype=np.float64)
            if len(corrs) == 3
            else np.ones(len(src))
        )
        return src, dst, w
    src = np.array([c.source for c in corrs])
    dst = np.array([c.target for c in corrs])
    w = np.array([c.weight for c in corrs])
    return src, dst, w


def weighted_kabsch(corrs) -> RigidTransform:
    """Closed-form minimizer of the weighted sum of squared residuals.

    Centers both sides at their weighted centroids, takes the SVD of the
    weighted cross-covariance, and corrects the determinant sign so the
    result is a proper rotation.
    """
    src, dst, w = _unpack(corrs)
    if len(src) < 3:
        raise DegenerateConfigurationError("need at least 3 correspondences")
    wsum = w.sum()
    if wsum <= 0:
        raise DegenerateConfigurationError("total weight must be positive")
    if (w > 0).sum() < 3:
        raise DegenerateConfigurationError("need at least 3 positively weighted pairs")

    src_c = (w @ src) / wsum
    dst_c = (w @ dst) / wsum
    xs = src - src_c
    ys = dst - dst_c
    cov = (xs * w[:, None]).T @ ys  # H = sum_k w_k x_k y_k^T

    u, sing, vt = np.linalg.svd(cov)
    if sing[0] <= 0 or sing[1] / sing[0] < 1e-12:
        raise DegenerateConfigurationError(
            "correspondences are collinear or coincident; rotation unidentifiable"
        )
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    rotation = v @ np.diag([1.0, 1.0, d]) @ u.T
    translation = dst_c - rotation @ src_c
    return RigidTransform(rotation, translation)


def random_rotation(rng, max_angle_deg=180.0):
    """Uniform random axis, uniform angle in [0, max_angle_deg]."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(0, max_angle_deg))
    k = np.array(
        [
            [0, -axis[2], axis[1]],
            [axis[2], 0, -axis[0]],
            [-axis[1], axis[0], 0],
        ]
    )
    rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
    return rot
