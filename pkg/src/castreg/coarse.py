"""Coarse matching: attention block stack and correspondence extraction.

A block runs, in order: rotary self-attention and cross-attention on the
coarsest level, multi-scale fusion, layer matching + compatibility graph
construction on the mid level, then the two sparse attentions (salient-key
self-attention and spot-guided cross-attention). All attention modules are
residual: F <- F + scale * MLP(attention output), so zeroed MLP weights
leave features untouched.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .attention import (
    AttentionWeights,
    RotaryEmbedding3D,
    init_attention_weights,
    init_rotary_embedding,
    linear_attention,
    multi_head_attention,
    softmax,
)
from .consistency import (
    SamplingConfig,
    build_compatibility,
    sample_salient,
    scaled_degrees,
)
from .features import FeaturePyramid
from .spatial import SpatialIndex

__all__ = [
    "CoarseConfig",
    "Mlp",
    "init_mlp",
    "MatchScores",
    "CoarseWeights",
    "CoarseState",
    "layer_match_scores",
    "multiscale_fuse",
    "cast_block",
    "final_match",
    "mutual_topk",
    "init_coarse_weights",
    "run_coarse_matching",
]


@dataclass(frozen=True)
class CoarseConfig:
    n_blocks: int = 3
    dim: int = 128
    n_heads: int = 4
    sigma_c: float = 0.6
    residual_scale: float = 0.1
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("need at least one block")


@dataclass(frozen=True)
class Mlp:
    """Two-layer ReLU perceptron applied row-wise."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __call__(self, x):
        hidden = np.maximum(np.asarray(x, dtype=np.float64) @ self.w1 + self.b1, 0.0)
        return hidden @ self.w2 + self.b2


def init_mlp(rng, d_in, d_hidden, d_out):
    return Mlp(
        w1=rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_hidden)),
        b1=np.zeros(d_hidden),
        w2=rng.normal(0.0, 1.0 / np.sqrt(d_hidden), size=(d_hidden, d_out)),
        b2=np.zeros(d_out),
    )


def zero_mlp(d_in, d_hidden, d_out):
    return Mlp(np.zeros((d_in, d_hidden)), np.zeros(d_hidden), np.zeros((d_hidden, d_out)), np.zeros(d_out))


@dataclass(frozen=True)
class MatchScores:
    similarity: np.ndarray       # S, (M', N')
    scores: np.ndarray           # P, (M', N')
    overlap_x: Optional[np.ndarray] = None
    overlap_y: Optional[np.ndarray] = None


def dual_softmax(similarity):
    return softmax(similarity, axis=0) * softmax(similarity, axis=1)


def layer_match_scores(f_x, f_y):
    """S = F_X F_Y^T; P = row-softmax(S) * column-softmax(S) elementwise."""
    f_x = np.asarray(f_x, dtype=np.float64)
    f_y = np.asarray(f_y, dtype=np.float64)
    if f_x.shape[1] != f_y.shape[1]:
        raise ValueError("feature widths disagree")
    s = f_x @ f_y.T
    return s, dual_softmax(s)


def multiscale_fuse(f_quarter, f_eighth, up_parent, down_idx, down_dist, mlp_up, mlp_down):
    """Residual cross-resolution fusion.

    Each quarter-level row receives MLP(nearest eighth-level feature); each
    eighth-level row receives MLP(inverse-distance weighted mean of its 3
    nearest quarter-level features).
    """
    f_quarter = np.asarray(f_quarter, dtype=np.float64)
    f_eighth = np.asarray(f_eighth, dtype=np.float64)
    up = f_eighth[np.asarray(up_parent, dtype=np.int64)]
    inv = 1.0 / np.maximum(np.asarray(down_dist, dtype=np.float64), 1e-10)
    weights = inv / inv.sum(axis=1, keepdims=True)
    down = np.einsum("nk,nkd->nd", weights, f_quarter[np.asarray(down_idx, dtype=np.int64)])
    return f_quarter + mlp_up(up), f_eighth + mlp_down(down)


def final_match(f_x, f_y, overlap_mlp) -> MatchScores:
    """Dual-softmax scores gated by predicted per-node overlap likelihoods."""
    f_x = np.asarray(f_x, dtype=np.float64)
    f_y = np.asarray(f_y, dtype=np.float64)
    o_x = 1.0 / (1.0 + np.exp(-overlap_mlp(f_x)[:, 0]))
    o_y = 1.0 / (1.0 + np.exp(-overlap_mlp(f_y)[:, 0]))
    s, p0 = layer_match_scores(f_x, f_y)
    return MatchScores(similarity=s, scores=np.outer(o_x, o_y) * p0, overlap_x=o_x, overlap_y=o_y)


def mutual_topk(scores):
    """Mutual-argmax correspondence selection.

    (i, j) is selected iff j is the argmax of row i and i the argmax of
    column j (ties to the lower index, numpy argmax order) and the score is
    positive. Returns (row_idx, col_idx, scores) sorted by descending score.
    """
    p = np.asarray(scores, dtype=np.float64)
    if p.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    row_best = p.argmax(axis=1)
    col_best = p.argmax(axis=0)
    rows = np.arange(p.shape[0])
    mutual = (col_best[row_best] == rows) & (p[rows, row_best] > 0)
    i_idx = rows[mutual]
    j_idx = row_best[mutual]
    vals = p[i_idx, j_idx]
    order = np.lexsort((i_idx, -vals))
    return i_idx[order], j_idx[order], vals[order]


@dataclass
class _BlockWeights:
    self_eighth: AttentionWeights
    self_eighth_mlp: Mlp
    cross_eighth: AttentionWeights
    cross_eighth_mlp: Mlp
    fuse_up: Mlp
    fuse_down: Mlp
    self_salient: AttentionWeights
    self_salient_mlp: Mlp
    cross_spot: AttentionWeights
    cross_spot_mlp: Mlp


@dataclass
class CoarseWeights:
    rotary: RotaryEmbedding3D
    init_linear: AttentionWeights
    init_linear_mlp: Mlp
    blocks: List[_BlockWeights]
    overlap_mlp: Mlp


def init_coarse_weights(seed, cfg: CoarseConfig) -> CoarseWeights:
    rng = np.random.default_rng(seed)
    d = cfg.dim
    head_dim = d // cfg.n_heads

    def attn():
        return init_attention_weights(rng.integers(2**63), d, n_heads=cfg.n_heads)

    blocks = []
    for _ in range(cfg.n_blocks):
        blocks.append(
            _BlockWeights(
                self_eighth=attn(),
                self_eighth_mlp=init_mlp(rng, d, d, d),
                cross_eighth=attn(),
                cross_eighth_mlp=init_mlp(rng, d, d, d),
                fuse_up=init_mlp(rng, d, d, d),
                fuse_down=init_mlp(rng, d, d, d),
                self_salient=attn(),
                self_salient_mlp=init_mlp(rng, d, d, d),
                cross_spot=attn(),
                cross_spot_mlp=init_mlp(rng, d, d, d),
            )
        )
    return CoarseWeights(
        rotary=init_rotary_embedding(rng.integers(2**63), head_dim),
        init_linear=attn(),
        init_linear_mlp=init_mlp(rng, d, d, d),
        blocks=blocks,
        overlap_mlp=init_mlp(rng, d, d, 1),
    )


@dataclass
class CoarseState:
    """Mutable per-pair state threaded through the block stack."""

    pyr_x: FeaturePyramid
    pyr_y: FeaturePyramid
    f_quarter_x: np.ndarray
    f_quarter_y: np.ndarray
    f_eighth_x: np.ndarray
    f_eighth_y: np.ndarray
    index_quarter_x: SpatialIndex
    index_quarter_y: SpatialIndex
    neighbors_x: np.ndarray  # (M', neighborhood_size) source-side kNN
    neighbors_y: np.ndarray
    down_idx_x: np.ndarray
    down_dist_x: np.ndarray
    down_idx_y: np.ndarray
    down_dist_y: np.ndarray
    layer_scores: List[np.ndarray] = field(default_factory=list)
    spot_audit: List[Dict] = field(default_factory=list)
    salient_audit: List[Dict] = field(default_factory=list)


def _normalize_rows(f):
    return f / np.maximum(np.linalg.norm(f, axis=1, keepdims=True), 1e-12)


def make_coarse_state(pyr_x: FeaturePyramid, pyr_y: FeaturePyramid, cfg: CoarseConfig) -> CoarseState:
    from scipy.spatial import cKDTree

    qx, qy = pyr_x.points["quarter"], pyr_y.points["quarter"]
    ex, ey = pyr_x.points["eighth"], pyr_y.points["eighth"]
    idx_x, idx_y = SpatialIndex(qx), SpatialIndex(qy)
    k = min(cfg.sampling.neighborhood_size, len(qx))
    nbr_x, _ = idx_x.knn_batch(qx, k)
    k = min(cfg.sampling.neighborhood_size, len(qy))
    nbr_y, _ = idx_y.knn_batch(qy, k)

    def down_maps(quarter, eighth):
        tree = cKDTree(quarter)
        dist, idx = tree.query(eighth, k=min(3, len(quarter)))
        return np.atleast_2d(idx), np.atleast_2d(dist)

    di_x, dd_x = down_maps(qx, ex)
    di_y, dd_y = down_maps(qy, ey)
    return CoarseState(
        pyr_x=pyr_x,
        pyr_y=pyr_y,
        f_quarter_x=pyr_x.features["quarter"].copy(),
        f_quarter_y=pyr_y.features["quarter"].copy(),
        f_eighth_x=pyr_x.features["eighth"].copy(),
        f_eighth_y=pyr_y.features["eighth"].copy(),
        index_quarter_x=idx_x,
        index_quarter_y=idx_y,
        neighbors_x=nbr_x,
        neighbors_y=nbr_y,
        down_idx_x=di_x,
        down_dist_x=dd_x,
        down_idx_y=di_y,
        down_dist_y=dd_y,
    )


def _residual_attention(f_a, f_b, w, mlp, scale, positions=None, emb=None, mask=None):
    out = multi_head_attention(f_a, f_b, w, positions=positions, emb=emb, mask=mask)
    return f_a + scale * mlp(out)


def _spot_masks(neighbors, corr_targets, confidences, target_points, cfg: SamplingConfig):
    """Per-query allowed-key sets for spot-guided cross-attention.

    Seeds per node: the node plus its (k_seeds - 1) highest-confidence
    neighbors; the spot is the union of the target-side neighborhoods of
    the seeds' correspondences. Returns (key_idx (n, m), key_valid (n, m))
    padded with index 0 where invalid; rows contain unique indices.
    """
    from scipy.spatial import cKDTree

    n, n_t = len(neighbors), len(target_points)
    tree = cKDTree(target_points)
    k = min(cfg.neighborhood_size, n_t)
    _, target_nbr = tree.query(target_points, k=k)
    target_nbr = np.atleast_2d(target_nbr)
    cap = cfg.k_seeds * k
    key_idx = np.zeros((n, cap), dtype=np.int64)
    key_valid = np.zeros((n, cap), dtype=bool)
    for i in range(n):
        nbrs = neighbors[i][neighbors[i] != i]
        if len(nbrs):
            order = np.lexsort((nbrs, -confidences[nbrs]))
            seeds = np.concatenate(([i], nbrs[order[: cfg.k_seeds - 1]]))
        else:
            seeds = np.array([i])
        spot = np.unique(target_nbr[corr_targets[seeds]])
        key_idx[i, : len(spot)] = spot
        key_valid[i, : len(spot)] = True
    width = max(int(key_valid.sum(axis=1).max()), 1)
    return key_idx[:, :width], key_valid[:, :width]


def _gathered_attention(f_a, f_b, w, key_idx, key_valid):
    """Multi-head attention over per-query gathered key subsets.

    Numerically identical to dense attention with a boolean mask marking
    the same (unique) keys, but only touches the allowed entries.
    """
    head_dim = w.dim // w.n_heads
    n, m = key_idx.shape
    q = (f_a @ w.w_q).reshape(n, w.n_heads, head_dim)
    k = (f_b @ w.w_k)[key_idx].reshape(n, m, w.n_heads, head_dim)
    v = (f_b @ w.w_v)[key_idx].reshape(n, m, w.n_heads, head_dim)
    logits = np.einsum("nhd,nmhd->nhm", q, k) / np.sqrt(head_dim)
    logits = np.where(key_valid[:, None, :], logits, -np.inf)
    attn = softmax(logits, axis=2)
    out = np.einsum("nhm,nmhd->nhd", attn, v).reshape(n, w.dim)
    if w.w_o is not None:
        out = out @ w.w_o
    return out


def cast_block(state: CoarseState, weights: _BlockWeights, rotary, cfg: CoarseConfig) -> CoarseState:
    """One consistency-aware spot-guided attention block; mutates the state."""
    scale = cfg.residual_scale
    ex_pts, ey_pts = state.pyr_x.points["eighth"], state.pyr_y.points["eighth"]

    # coarsest level: rotary self-attention, then cross-attention
    state.f_eighth_x = _residual_attention(
        state.f_eighth_x, state.f_eighth_x, weights.self_eighth, weights.self_eighth_mlp,
        scale, positions=(ex_pts, ex_pts), emb=rotary,
    )
    state.f_eighth_y = _residual_attention(
        state.f_eighth_y, state.f_eighth_y, weights.self_eighth, weights.self_eighth_mlp,
        scale, positions=(ey_pts, ey_pts), emb=rotary,
    )
    fx, fy = state.f_eighth_x, state.f_eighth_y
    state.f_eighth_x = _residual_attention(fx, fy, weights.cross_eighth, weights.cross_eighth_mlp, scale)
    state.f_eighth_y = _residual_attention(fy, fx, weights.cross_eighth, weights.cross_eighth_mlp, scale)

    # multi-scale fusion in both clouds
    state.f_quarter_x, state.f_eighth_x = multiscale_fuse(
        state.f_quarter_x, state.f_eighth_x, state.pyr_x.parents["quarter"],
        state.down_idx_x, state.down_dist_x, weights.fuse_up, weights.fuse_down,
    )
    state.f_quarter_y, state.f_eighth_y = multiscale_fuse(
        state.f_quarter_y, state.f_eighth_y, state.pyr_y.parents["quarter"],
        state.down_idx_y, state.down_dist_y, weights.fuse_up, weights.fuse_down,
    )

    # layer matching scores and per-cloud compatibility graphs
    _, p_layer = layer_match_scores(
        _normalize_rows(state.f_quarter_x), _normalize_rows(state.f_quarter_y)
    )
    state.layer_scores.append(p_layer)
    corr_x = p_layer.argmax(axis=1)          # best target node per X node
    corr_y = p_layer.argmax(axis=0)          # best source node per Y node
    score_x = p_layer.max(axis=1)
    score_y = p_layer.max(axis=0)
    qx, qy = state.pyr_x.points["quarter"], state.pyr_y.points["quarter"]
    graph_x = build_compatibility(qx, qy[corr_x], cfg.sigma_c)
    graph_y = build_compatibility(qy, qx[corr_y], cfg.sigma_c)

    # consistency-aware self-attention: keys restricted to salient nodes
    for side, graph, scores_side in (("x", graph_x, score_x), ("y", graph_y, score_y)):
        salient = sample_salient(scores_side, graph, cfg.sampling)
        fell_back = not (scaled_degrees(graph) > cfg.sampling.degree_threshold).any()
        state.salient_audit.append(
            {"side": side, "keys": salient, "fallback": fell_back,
             "scaled_degrees": scaled_degrees(graph)}
        )
        f = state.f_quarter_x if side == "x" else state.f_quarter_y
        # the allowed key set is the same for every query, so masked
        # attention over f equals attention with keys f[salient]
        out = _residual_attention(f, f[salient], weights.self_salient, weights.self_salient_mlp, scale)
        if side == "x":
            state.f_quarter_x = out
        else:
            state.f_quarter_y = out

    # spot-guided cross-attention with consistency-aware seed confidence
    conf_x = score_x * scaled_degrees(graph_x)
    conf_y = score_y * scaled_degrees(graph_y)
    idx_xy, valid_xy = _spot_masks(state.neighbors_x, corr_x, conf_x, qy, cfg.sampling)
    idx_yx, valid_yx = _spot_masks(state.neighbors_y, corr_y, conf_y, qx, cfg.sampling)
    state.spot_audit.append(
        {"xy": (idx_xy, valid_xy), "yx": (idx_yx, valid_yx)}
    )
    fqx, fqy = state.f_quarter_x, state.f_quarter_y
    state.f_quarter_x = fqx + scale * weights.cross_spot_mlp(
        _gathered_attention(fqx, fqy, weights.cross_spot, idx_xy, valid_xy)
    )
    state.f_quarter_y = fqy + scale * weights.cross_spot_mlp(
        _gathered_attention(fqy, fqx, weights.cross_spot, idx_yx, valid_yx)
    )
    return state


def run_coarse_matching(pyr_x, pyr_y, weights: CoarseWeights, cfg: CoarseConfig):
    """Full coarse stage: initial linear cross-attention, block stack, gating.

    Returns (state, MatchScores) with enhanced features left in the state.
    """
    state = make_coarse_state(pyr_x, pyr_y, cfg)

    # one global linear cross-attention pass before the first block
    w = weights.init_linear
    fx, fy = state.f_quarter_x, state.f_quarter_y
    out_x = linear_attention(fx @ w.w_q, fy @ w.w_k, fy @ w.w_v)
    out_y = linear_attention(fy @ w.w_q, fx @ w.w_k, fx @ w.w_v)
    state.f_quarter_x = fx + cfg.residual_scale * weights.init_linear_mlp(out_x)
    state.f_quarter_y = fy + cfg.residual_scale * weights.init_linear_mlp(out_y)

    for block in weights.blocks:
        state = cast_block(state, block, weights.rotary, cfg)

    scores = final_match(
        _normalize_rows(state.f_quarter_x),
        _normalize_rows(state.f_quarter_y),
        weights.overlap_mlp,
    )
    return state, scores
