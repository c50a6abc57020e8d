"""Registration and matching evaluation metrics."""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MetricsConfig",
    "rre",
    "rte",
    "registration_rmse",
    "inlier_ratio",
    "fmr",
    "registration_recall",
    "patch_overlap_ratio",
    "pir",
    "pmr",
]


@dataclass(frozen=True)
class MetricsConfig:
    """Thresholds for the indoor/outdoor evaluation protocols (meters/degrees)."""

    rr_rte_threshold: float = 2.0
    rr_rre_threshold: float = 5.0
    rmse_threshold: float = 0.2
    inlier_threshold: float = 0.1
    fmr_threshold: float = 0.05
    pir_threshold: float = 0.2
    protocol: str = "outdoor"  # "outdoor" (RTE/RRE) or "indoor" (RMSE)

    def __post_init__(self):
        for name in (
            "rr_rte_threshold",
            "rr_rre_threshold",
            "rmse_threshold",
            "inlier_threshold",
            "fmr_threshold",
            "pir_threshold",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.protocol not in ("outdoor", "indoor"):
            raise ValueError("protocol must be 'outdoor' or 'indoor'")


def rre(estimate, truth):
    """Geodesic rotation error in degrees, clamped against round-off.

    The arccos argument is clipped to [-1, 1]; a trace marginally above 3
    therefore yields exactly 0 instead of NaN.
    """
    arg = (np.trace(estimate.rotation.T @ truth.rotation) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(arg, -1.0, 1.0))))


def rte(estimate, truth):
    """Euclidean distance between the two translation vectors, in meters."""
    return float(np.linalg.norm(estimate.translation - truth.translation))


def registration_rmse(gt_corrs, estimate):
    """Root mean square residual over a ground-truth correspondence set.

    ``gt_corrs`` is (src_points, dst_points) aligned row to row.
    """
    src = np.asarray(gt_corrs[0], dtype=np.float64)
    dst = np.asarray(gt_corrs[1], dtype=np.float64)
    if len(src) == 0:
        raise ValueError("ground-truth correspondence set is empty")
    residuals = estimate.apply(src) - dst
    return float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))


def inlier_ratio(src, dst, gt, cfg: MetricsConfig) -> float:
    """Fraction of correspondences with residual under gt below the threshold."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) == 0:
        raise ValueError("correspondence set is empty")
    resid = np.linalg.norm(gt.apply(src) - dst, axis=1)
    return float(np.mean(resid < cfg.inlier_threshold))


def fmr(inlier_ratios, cfg: MetricsConfig) -> float:
    """Fraction of pairs whose inlier ratio exceeds the recall threshold."""
    irs = np.asarray(inlier_ratios, dtype=np.float64)
    if irs.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(irs > cfg.fmr_threshold))


def registration_recall(rows, cfg: MetricsConfig) -> float:
    """Fraction of successfully registered pairs.

    ``rows`` is a sequence of dicts carrying 'rte'/'rre' (outdoor protocol)
    or 'rmse' (indoor protocol).
    """
    if len(rows) == 0:
        raise ValueError("empty batch")
    if cfg.protocol == "indoor":
        flags = [row["rmse"] < cfg.rmse_threshold for row in rows]
    else:
        flags = [
            row["rte"] < cfg.rr_rte_threshold and row["rre"] < cfg.rr_rre_threshold
            for row in rows
        ]
    return float(np.mean(flags))


def patch_overlap_ratio(p, q, gt, r):
    """Volume overlap fraction of two radius-r spheres centered at gt·p and q.

    The center distance is clamped from above at 2r (disjoint spheres), so
    the ratio is 1 at distance 0 and 0 at or beyond 2r.
    """
    if r <= 0:
        raise ValueError("patch radius must be positive")
    d = float(np.linalg.norm(gt.apply(np.asarray(p, dtype=np.float64)) - q))
    d = min(d, 2.0 * r)
    return 1.0 - 3.0 * d / (4.0 * r) + d**3 / (16.0 * r**3)


def pir(src_nodes, dst_nodes, gt, r):
    """Patch inlier ratio: fraction of node pairs with non-zero patch overlap."""
    src_nodes = np.asarray(src_nodes, dtype=np.float64)
    dst_nodes = np.asarray(dst_nodes, dtype=np.float64)
    if len(src_nodes) == 0:
        return 0.0
    d = np.linalg.norm(gt.apply(src_nodes) - dst_nodes, axis=1)
    return float(np.mean(d < 2.0 * r))


def pmr(pirs, cfg: MetricsConfig) -> float:
    """Patch matching recall: fraction of pairs with PIR above the threshold."""
    vals = np.asarray(pirs, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(vals > cfg.pir_threshold))
