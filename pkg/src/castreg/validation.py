"""Input validation helpers shared across the package."""

import numpy as np

__all__ = ["as_points", "as_features", "as_vector3", "check_finite"]


def as_points(points, name="points"):
    """Coerce input to an (n, 3) float64 array of finite coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {pts.shape}")
    if pts.size and not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def as_features(features, n_points, name="features"):
    """Coerce a per-point feature matrix and check row alignment."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {feats.shape}")
    if feats.shape[0] != n_points:
        raise ValueError(
            f"{name} has {feats.shape[0]} rows but the cloud has {n_points} points"
        )
    if feats.size and not np.isfinite(feats).all():
        raise ValueError(f"{name} contains non-finite values")
    return feats


def as_vector3(v, name="vector"):
    vec = np.asarray(v, dtype=np.float64).reshape(-1)
    if vec.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {vec.shape}")
    if not np.isfinite(vec).all():
        raise ValueError(f"{name} contains non-finite values")
    return vec


def check_finite(arr, name="array"):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr
