"""Supervision terms as evaluable scalar functionals (no gradients).

These mirror the training objectives of the matching pipeline and serve as
verification and diagnostic quantities. The probabilistic chamfer term used
to train keypoint detectors elsewhere is defined only by external
reference and is deliberately not implemented; the total omits it.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "LossWeights",
    "spot_matching_loss",
    "coarse_matching_loss",
    "infonce_loss",
    "keypoint_l2_loss",
    "inlier_bce_loss",
    "pose_losses",
    "total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 0.1
    lambda_c: float = 0.2
    lambda_f: float = 1.0
    lambda_k: float = 1.0
    lambda_i: float = 1.0
    lambda_t: float = 5.0
    lambda_r: float = 20.0
    infonce_w: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        for name in ("lambda_s", "lambda_c", "lambda_f", "lambda_k", "lambda_i", "lambda_t", "lambda_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.infonce_w is not None:
            w = np.asarray(self.infonce_w, dtype=np.float64)
            if np.abs(w - w.T).max() > 1e-9:
                raise ValueError("InfoNCE bilinear matrix must be symmetric")
            object.__setattr__(self, "infonce_w", w)


def spot_matching_loss(p_layers, gt_pairs, overlaps):
    """Overlap-weighted negative log matching score, averaged over layers."""
    gt_pairs = np.asarray(gt_pairs, dtype=np.int64)
    overlaps = np.asarray(overlaps, dtype=np.float64)
    if gt_pairs.size == 0:
        raise ValueError("ground-truth correspondence set is empty")
    osum = overlaps.sum()
    total = 0.0
    for p in p_layers:
        vals = p[gt_pairs[:, 0], gt_pairs[:, 1]]
        total += -(overlaps @ np.log(vals)) / osum
    return total / len(p_layers)


def coarse_matching_loss(p, gt_pairs, overlaps, overlap_x, overlap_y, unmatched_x, unmatched_y):
    """Final-score cross entropy plus overlap-head penalties on unmatched nodes."""
    gt_pairs = np.asarray(gt_pairs, dtype=np.int64)
    unmatched_x = np.asarray(unmatched_x, dtype=np.int64)
    unmatched_y = np.asarray(unmatched_y, dtype=np.int64)
    if gt_pairs.size == 0 and unmatched_x.size == 0 and unmatched_y.size == 0:
        raise ValueError("all three index sets are empty")
    loss = 0.0
    if gt_pairs.size:
        overlaps = np.asarray(overlaps, dtype=np.float64)
        vals = p[gt_pairs[:, 0], gt_pairs[:, 1]]
        loss += -(overlaps @ np.log(vals)) / overlaps.sum()
    if unmatched_x.size:
        loss += -np.mean(np.log(1.0 - np.asarray(overlap_x)[unmatched_x]))
    if unmatched_y.size:
        loss += -np.mean(np.log(1.0 - np.asarray(overlap_y)[unmatched_y]))
    return float(loss)


def infonce_loss(triples, w):
    """Mean InfoNCE over (anchor, positive, negatives) descriptor triples."""
    if len(triples) == 0:
        raise ValueError("no valid triples")
    w = np.asarray(w, dtype=np.float64)
    total = 0.0
    for d_x, d_pos, negatives in triples:
        negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
        if len(negatives) == 0:
            raise ValueError("each triple needs at least one negative")
        pos_logit = d_x @ w @ d_pos
        neg_logits = negatives @ (w @ d_x)
        m = max(pos_logit, neg_logits.max())
        denom = np.exp(pos_logit - m) + np.exp(neg_logits - m).sum()
        total += -(pos_logit - m - np.log(denom))
    return total / len(triples)


def keypoint_l2_loss(src_pts, predicted, gt):
    """Mean distance between gt-transformed sources and predicted targets."""
    src_pts = np.asarray(src_pts, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if len(src_pts) == 0:
        raise ValueError("no keypoint pairs")
    return float(np.mean(np.linalg.norm(gt.apply(src_pts) - predicted, axis=1)))


def inlier_bce_loss(confidences, residuals, r_f):
    """Binary cross entropy against the residual-threshold inlier labels."""
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.size == 0:
        raise ValueError("no correspondences")
    labels = (np.asarray(residuals, dtype=np.float64) < r_f).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = -(labels * np.log(conf) + (1.0 - labels) * np.log(1.0 - conf))
    terms = np.where((labels == 1.0) & (conf == 1.0), 0.0, terms)
    terms = np.where((labels == 0.0) & (conf == 0.0), 0.0, terms)
    return float(np.mean(terms))


def pose_losses(estimate, truth):
    """(translation L2, Frobenius norm of rotation mismatch)."""
    l_t = float(np.linalg.norm(estimate.translation - truth.translation))
    l_r = float(np.linalg.norm(estimate.rotation.T @ truth.rotation - np.eye(3)))
    return l_t, l_r


def total_loss(terms, weights: LossWeights):
    """Weighted sum of the seven implemented supervision terms.

    ``terms`` carries keys 's', 'c', 'f', 'k', 'i', 't', 'r'. The
    externally defined keypoint chamfer term is not part of the sum.
    """
    return (
        weights.lambda_s * terms["s"]
        + weights.lambda_c * terms["c"]
        + weights.lambda_f * terms["f"]
        + weights.lambda_k * terms["k"]
        + weights.lambda_i * terms["i"]
        + weights.lambda_t * terms["t"]
        + weights.lambda_r * terms["r"]
    )
