"""Fine matching: keypoints, virtual correspondences, and pose estimation.

The sparse path detects one keypoint per mid-level node, predicts a
virtual target for each via local attention over the matched patch, scores
the resulting correspondences with a compatibility graph embedding, and
solves the weighted least-squares pose. A dense pass over the finest level
then refines the estimate.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial import cKDTree

from .attention import AttentionWeights, single_head_local_attention, softmax
from .coarse import Mlp, init_mlp
from .consistency import build_compatibility, scaled_degrees
from .pose import DegenerateConfigurationError, RigidTransform, weighted_kabsch
from .spatial import SpatialIndex

__all__ = [
    "Keypoint",
    "FineConfig",
    "FineWeights",
    "init_fine_weights",
    "detect_keypoints",
    "group_patches",
    "keypoint_to_patch",
    "virtual_correspondence",
    "graph_embed_confidence",
    "sparse_register",
    "dense_refine",
    "ransac_register",
    "icp_refine",
]


@dataclass(frozen=True)
class Keypoint:
    position: np.ndarray
    descriptor: np.ndarray
    uncertainty: float
    parent: int


@dataclass(frozen=True)
class FineConfig:
    r_k: float = 0.8          # keypoint-to-node assignment threshold (m)
    sigma_d: float = 0.3      # fine compatibility threshold (m)
    r_d: float = 0.5          # dense matching radius (m)
    r_p: float = 0.15         # positive matching threshold (m)
    r_n: float = 0.2          # negative matching threshold (m)
    r_f: float = 0.3          # inlier labelling threshold (m)
    k_patch: int = 32         # dense points grouped per node for detection
    k_p: int = 16             # keypoints per target patch
    k_s: int = 4              # top-k similarity candidates
    k_d: int = 6              # dense neighbors
    d_e: int = 64             # embedding width
    n_embed_layers: int = 3
    confidence_bypass: bool = True  # score correspondences by scaled degree

    def __post_init__(self):
        if not (0 < self.r_p <= self.r_n):
            raise ValueError("thresholds must satisfy 0 < r_p <= r_n")
        if self.k_s > self.k_p:
            raise ValueError("k_s must not exceed k_p")


@dataclass
class FineWeights:
    detector_mlp: Mlp          # per-member logit from [offset, range, feature]
    uncertainty_mlp: Mlp       # scalar head on the aggregated feature
    desc_proj: np.ndarray      # descriptor projection (D_f, D_f)
    w_q_local: np.ndarray      # local attention query weights (D_f, D_f)
    w_k_local: np.ndarray
    embed_in: Mlp              # [x, d, y_hat, d_hat] -> D_e
    embed_layers: List[AttentionWeights] = field(default_factory=list)
    confidence_mlp: Optional[Mlp] = None


def init_fine_weights(seed, feature_dim, cfg: FineConfig) -> FineWeights:
    rng = np.random.default_rng(seed)
    d_f, d_e = feature_dim, cfg.d_e
    member_dim = 4 + d_f
    layers = [
        AttentionWeights(
            rng.normal(0, 1 / math.sqrt(d_e), (d_e, d_e)),
            rng.normal(0, 1 / math.sqrt(d_e), (d_e, d_e)),
            rng.normal(0, 1 / math.sqrt(d_e), (d_e, d_e)),
        )
        for _ in range(cfg.n_embed_layers)
    ]
    return FineWeights(
        detector_mlp=init_mlp(rng, member_dim, d_f, 1),
        uncertainty_mlp=init_mlp(rng, d_f, d_f, 1),
        desc_proj=rng.normal(0, 1 / math.sqrt(d_f), (d_f, d_f)),
        w_q_local=rng.normal(0, 1 / math.sqrt(d_f), (d_f, d_f)),
        w_k_local=rng.normal(0, 1 / math.sqrt(d_f), (d_f, d_f)),
        embed_in=init_mlp(rng, 2 * (3 + d_f), d_e, d_e),
        embed_layers=layers,
        confidence_mlp=init_mlp(rng, d_e, d_e, 1),
    )


def group_patches(nodes, dense_points, dense_features, k):
    """kNN patches of dense points around each node: list of (points, features)."""
    tree = cKDTree(dense_points)
    k_eff = min(k, len(dense_points))
    _, idx = tree.query(nodes, k=k_eff)
    idx = np.atleast_2d(idx)
    return [(dense_points[row], dense_features[row]) for row in idx]


def detect_keypoints(patches, nodes, weights: FineWeights) -> List[Keypoint]:
    """One attention-pooled keypoint (+descriptor, +uncertainty) per patch.

    Member inputs are the offset from the patch node, its norm, and the
    member feature; patches with fewer than 3 members are skipped. The
    keypoint is a convex combination of member positions, so it stays
    inside the patch bounding box.
    """
    sizes = {len(pts) for pts, _ in patches}
    if len(sizes) == 1 and min(sizes, default=0) >= 3:
        # uniform patch size: run the detector over all patches at once
        pts = np.stack([p for p, _ in patches])        # (n, k, 3)
        feats = np.stack([f for _, f in patches])      # (n, k, d)
        offsets = pts - np.asarray(nodes)[:, None, :]
        ranges = np.linalg.norm(offsets, axis=2, keepdims=True)
        member_in = np.concatenate([offsets, ranges, feats], axis=2)
        n, k, width = member_in.shape
        logits = weights.detector_mlp(member_in.reshape(n * k, width)).reshape(n, k)
        attn = softmax(logits, axis=1)
        positions = np.einsum("nk,nki->ni", attn, pts)
        pooled = np.einsum("nk,nki->ni", attn, feats)
        descriptors = pooled @ weights.desc_proj
        raws = weights.uncertainty_mlp(pooled)[:, 0]
        uncertainties = np.logaddexp(0.0, raws)  # softplus, always > 0
        return [
            Keypoint(positions[i], descriptors[i], float(uncertainties[i]), i)
            for i in range(n)
        ]

    keypoints = []
    for node_idx, (pts, feats) in enumerate(patches):
        if len(pts) < 3:
            continue
        offsets = pts - nodes[node_idx]
        ranges = np.linalg.norm(offsets, axis=1, keepdims=True)
        member_in = np.hstack([offsets, ranges, feats])
        logits = weights.detector_mlp(member_in)[:, 0]
        attn = softmax(logits)
        position = attn @ pts
        pooled = attn @ feats
        descriptor = pooled @ weights.desc_proj
        raw = weights.uncertainty_mlp(pooled[None, :])[0, 0]
        uncertainty = float(np.logaddexp(0.0, raw))  # softplus, always > 0
        keypoints.append(Keypoint(position, descriptor, uncertainty, node_idx))
    return keypoints


def keypoint_to_patch(keypoints_x, node_index_x: SpatialIndex, coarse_map, patches_y, cfg: FineConfig):
    """Pair each source keypoint with the keypoint patch of its matched node.

    ``coarse_map`` maps a source node index to a target node index (or -1);
    ``patches_y`` maps a target node index to its keypoint index array.
    Keypoints farther than r_k from every node, or assigned to nodes
    without a coarse correspondence, produce no pair.
    """
    pairs = []
    if not keypoints_x:
        return pairs
    positions = np.stack([kp.position for kp in keypoints_x])
    nearest, dists = node_index_x.knn_batch(positions, 1)
    for kp_idx, _ in enumerate(keypoints_x):
        if dists[kp_idx, 0] >= cfg.r_k:
            continue
        target_node = coarse_map.get(int(nearest[kp_idx, 0]), -1)
        if target_node < 0:
            continue
        candidates = patches_y.get(target_node)
        if candidates is None or len(candidates) == 0:
            continue
        pairs.append((kp_idx, target_node, candidates))
    return pairs


def virtual_correspondence(descriptor, cand_points, cand_descs, weights: FineWeights, cfg: FineConfig):
    """Attention-predicted virtual target from the top-k similar candidates."""
    cand_points = np.asarray(cand_points, dtype=np.float64)
    cand_descs = np.asarray(cand_descs, dtype=np.float64)
    if len(cand_points) == 0:
        raise ValueError("candidate patch is empty")
    if len(cand_points) > cfg.k_s:
        sims = cand_descs @ descriptor
        order = np.lexsort((np.arange(len(sims)), -sims))[: cfg.k_s]
        cand_points = cand_points[order]
        cand_descs = cand_descs[order]
    return single_head_local_attention(
        descriptor, cand_points, cand_descs, weights.w_q_local, weights.w_k_local
    )


def graph_embed_confidence(src_pts, src_descs, dst_pts, dst_descs, weights: FineWeights, cfg: FineConfig):
    """Per-correspondence inlier confidence in [0, 1].

    In bypass mode the confidence is the scaled generalized degree of the
    fine compatibility graph, a purely geometric signal. Otherwise the
    embedding layers modulate attention logits elementwise by the
    compatibility matrix before the softmax, and an MLP head squashes each
    row to a confidence.
    """
    src_pts = np.asarray(src_pts, dtype=np.float64)
    n = len(src_pts)
    if n < 2:
        return np.ones(n)
    graph = build_compatibility(src_pts, np.asarray(dst_pts, dtype=np.float64), cfg.sigma_d)
    if cfg.confidence_bypass:
        return scaled_degrees(graph)
    emb = weights.embed_in(np.hstack([src_pts, src_descs, dst_pts, dst_descs]))
    for layer in weights.embed_layers:
        logits = (emb @ layer.w_q) @ (emb @ layer.w_k).T / math.sqrt(cfg.d_e)
        emb = softmax(logits * graph.beta, axis=1) @ (emb @ layer.w_v)
    raw = weights.confidence_mlp(emb)[:, 0]
    return 1.0 / (1.0 + np.exp(-raw))


def sparse_register(src_pts, dst_pts, confidences) -> RigidTransform:
    """Weighted closed-form solve with confidences as weights."""
    return weighted_kabsch((src_pts, dst_pts, np.asarray(confidences, dtype=np.float64)))


def dense_refine(
    src_points,
    src_features,
    dst_points,
    dst_features,
    init: RigidTransform,
    weights: FineWeights,
    cfg: FineConfig,
    sparse_corrs=None,
):
    """One dense virtual-correspondence pass refining an initial pose.

    Source points are moved by ``init``; each gathers up to k_d neighbors
    within r_d in the target, predicts a virtual correspondence by local
    attention over the neighbor descriptors, and contributes with weight
    [1 - d / r_d]^+ where d is its distance to the virtual target. The
    pose is re-solved over the dense and (fixed-weight) sparse pairs
    jointly; with no dense matches the initial pose is returned unchanged.
    """
    src_points = np.asarray(src_points, dtype=np.float64)
    dst_points = np.asarray(dst_points, dtype=np.float64)
    moved = init.apply(src_points)
    tree = cKDTree(dst_points)
    k_eff = min(cfg.k_d, len(dst_points))
    dist, idx = tree.query(moved, k=k_eff, distance_upper_bound=cfg.r_d)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)

    n_dst = len(dst_points)
    valid = idx < n_dst
    rows = np.flatnonzero(valid.any(axis=1))
    if rows.size == 0:
        return init
    # batched local attention over the padded candidate sets
    safe_idx = np.where(valid, idx, 0)[rows]
    q = np.asarray(src_features, dtype=np.float64)[rows] @ weights.w_q_local
    keys = np.asarray(dst_features, dtype=np.float64) @ weights.w_k_local
    logits = np.einsum("nd,nkd->nk", q, keys[safe_idx])
    logits = np.where(valid[rows], logits, -np.inf)
    attn = softmax(logits, axis=1)
    vpoints = np.einsum("nk,nki->ni", attn, dst_points[safe_idx])
    d = np.linalg.norm(moved[rows] - vpoints, axis=1)
    w = np.maximum(0.0, 1.0 - d / cfg.r_d)
    keep = w > 0
    if not keep.any():
        return init

    src_all = src_points[rows[keep]]
    dst_all = vpoints[keep]
    w_all = w[keep]
    if sparse_corrs is not None:
        s_src, s_dst, s_w = sparse_corrs
        src_all = np.vstack([np.asarray(s_src), src_all])
        dst_all = np.vstack([np.asarray(s_dst), dst_all])
        w_all = np.concatenate([np.asarray(s_w), w_all])
    try:
        return weighted_kabsch((src_all, dst_all, w_all))
    except DegenerateConfigurationError:
        return init


def ransac_register(
    src_pts,
    dst_pts,
    iterations=1000,
    inlier_threshold=0.3,
    confidence=0.999,
    seed=0,
    batch=128,
) -> RigidTransform:
    """Minimal 3-point RANSAC with consensus refit.

    Hypotheses are generated in vectorized batches; the loop exits early
    once the standard (1 - ir^3)^n bound beats the requested confidence.
    Deterministic for a fixed seed.
    """
    src = np.asarray(src_pts, dtype=np.float64)
    dst = np.asarray(dst_pts, dtype=np.float64)
    n = len(src)
    if n < 3:
        raise DegenerateConfigurationError("RANSAC needs at least 3 correspondences")
    rng = np.random.default_rng(seed)

    best_count = 0
    best_inliers = None
    done = 0
    while done < iterations:
        m = min(batch, iterations - done)
        done += m
        triples = np.stack([rng.choice(n, size=3, replace=False) for _ in range(m)])
        a = src[triples]  # (m, 3, 3)
        b = dst[triples]
        ac = a - a.mean(axis=1, keepdims=True)
        bc = b - b.mean(axis=1, keepdims=True)
        cov = np.einsum("mki,mkj->mij", ac, bc)
        u, _, vt = np.linalg.svd(cov)
        det = np.linalg.det(np.einsum("mij,mkj->mik", vt.transpose(0, 2, 1), u))
        corr = np.repeat(np.eye(3)[None], m, axis=0)
        corr[:, 2, 2] = np.sign(det)
        rot = np.einsum("mij,mjk,mlk->mil", vt.transpose(0, 2, 1), corr, u)
        trans = b.mean(axis=1) - np.einsum("mij,mj->mi", rot, a.mean(axis=1))
        moved = np.einsum("mij,nj->mni", rot, src) + trans[:, None, :]
        resid = np.linalg.norm(moved - dst[None], axis=2)
        counts = (resid < inlier_threshold).sum(axis=1)
        top = int(counts.argmax())
        if counts[top] > best_count:
            best_count = int(counts[top])
            best_inliers = resid[top] < inlier_threshold
        if best_count >= 3:
            ir = best_count / n
            if 1.0 - (1.0 - ir**3) ** done >= confidence:
                break
    if best_count < 3 or best_inliers is None:
        raise DegenerateConfigurationError("no RANSAC hypothesis reached 3 inliers")
    est = weighted_kabsch((src[best_inliers], dst[best_inliers], np.ones(best_count)))
    # polish: re-select inliers at a shrinking threshold so strays that
    # barely clear the consensus band stop biasing the refit
    for factor in (1.0, 0.5):
        resid = np.linalg.norm(est.apply(src) - dst, axis=1)
        keep = resid < inlier_threshold * factor
        if keep.sum() >= 3:
            est = weighted_kabsch((src[keep], dst[keep], np.ones(int(keep.sum()))))
    return est


def icp_refine(
    src_pts,
    dst_pts,
    init: RigidTransform,
    max_iter=50,
    corr_dist=1.0,
    trim_fraction=0.2,
) -> RigidTransform:
    """Trimmed, distance-weighted point-to-point ICP.

    Source points outside the overlap region otherwise drag the solve
    toward crop boundaries and outliers, so each iteration drops the worst
    ``trim_fraction`` of associations and weights the rest by
    [1 - d / corr_dist]^+. Stops on ``max_iter`` or when the pose update
    falls below 1e-6 (matrix plus translation delta).
    """
    src = np.asarray(src_pts, dtype=np.float64)
    dst = np.asarray(dst_pts, dtype=np.float64)
    tree = cKDTree(dst)
    current = init
    for _ in range(max_iter):
        moved = current.apply(src)
        dist, idx = tree.query(moved, k=1, distance_upper_bound=corr_dist)
        valid = idx < len(dst)
        if valid.sum() < 3:
            raise DegenerateConfigurationError("no ICP associations within corr_dist")
        if trim_fraction > 0 and valid.sum() > 10:
            cutoff = np.quantile(dist[valid], 1.0 - trim_fraction)
            valid &= dist <= cutoff
        w = np.maximum(0.0, 1.0 - dist[valid] / corr_dist)
        if w.sum() <= 0 or (w > 0).sum() < 3:
            w = np.ones(int(valid.sum()))
        step = weighted_kabsch((src[valid], dst[idx[valid]], w))
        delta = np.abs(step.as_matrix() - current.as_matrix()).max()
        current = step
        if delta < 1e-6:
            break
    return current
