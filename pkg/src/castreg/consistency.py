"""Geometric compatibility graph, salient sampling, and spot construction.

Rigid motion preserves pairwise distances, so the absolute difference of
segment lengths between two correspondences measures how compatible they
are with a common transform. Row sums of the resulting matrix (the
generalized degrees) score each correspondence's global consistency.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "CompatibilityGraph",
    "SamplingConfig",
    "build_compatibility",
    "scaled_degrees",
    "spectral_weights",
    "sample_salient",
    "consistency_confidence",
    "build_spot",
]


@dataclass(frozen=True)
class CompatibilityGraph:
    beta: np.ndarray      # (n, n) symmetric, entries in [0, 1], zero diagonal
    degrees: np.ndarray   # off-diagonal row sums
    sigma_c: float


@dataclass(frozen=True)
class SamplingConfig:
    degree_threshold: float = 0.3
    salient_count: int = 48
    k_seeds: int = 4
    neighborhood_size: int = 12

    def __post_init__(self):
        if self.salient_count < 1:
            raise ValueError("salient_count must be >= 1")
        if not 1 <= self.k_seeds <= self.neighborhood_size:
            raise ValueError("k_seeds must be in [1, neighborhood_size]")


def build_compatibility(src, dst, sigma_c) -> CompatibilityGraph:
    """Pairwise compatibility beta_ij = [1 - d_ij^2 / sigma_c^2]^+.

    d_ij is the absolute difference between the source-side and
    target-side segment lengths of correspondences i and j. The diagonal
    is zeroed: self-compatibility carries no information and would shift
    every degree uniformly.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 2:
        raise ValueError("need at least 2 correspondences")
    if sigma_c <= 0:
        raise ValueError("sigma_c must be positive")
    diff = np.abs(cdist(src, src) - cdist(dst, dst))
    beta = np.maximum(0.0, 1.0 - diff**2 / sigma_c**2)
    np.fill_diagonal(beta, 0.0)
    return CompatibilityGraph(beta=beta, degrees=beta.sum(axis=1), sigma_c=float(sigma_c))


def scaled_degrees(graph: CompatibilityGraph):
    """Degrees divided by their maximum; all-zero degrees stay all-zero."""
    max_deg = graph.degrees.max() if len(graph.degrees) else 0.0
    if max_deg <= 0:
        return np.zeros_like(graph.degrees)
    return graph.degrees / max_deg


def spectral_weights(graph: CompatibilityGraph, iters: int = 30):
    """Leading-eigenvector scores of the compatibility matrix, max-scaled.

    Power iteration on the non-negative beta matrix concentrates mass on
    the largest mutually compatible subset, separating inliers from
    outliers far more sharply than one-step degrees when inliers are rare.
    """
    n = len(graph.degrees)
    v = np.ones(n)
    for _ in range(iters):
        nxt = graph.beta @ v
        norm = np.linalg.norm(nxt)
        if norm <= 0:
            return np.zeros(n)
        v = nxt / norm
    v = np.abs(v)
    top = v.max()
    return v / top if top > 0 else v


def sample_salient(scores, graph: CompatibilityGraph, cfg: SamplingConfig):
    """Two-stage salient-node sampling.

    Stage 1 keeps indices whose scaled degree exceeds the threshold; stage
    2 keeps the ``salient_count`` highest matching scores among survivors,
    ties broken by lower index. An empty survivor set falls back to the
    top-``salient_count`` by degree so downstream attention never starves.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(graph.degrees):
        raise ValueError("scores length must equal the correspondence count")
    sdeg = scaled_degrees(graph)
    survivors = np.flatnonzero(sdeg > cfg.degree_threshold)
    if survivors.size == 0:
        order = np.lexsort((np.arange(len(sdeg)), -sdeg))
        return np.sort(order[: cfg.salient_count])
    order = np.lexsort((survivors, -scores[survivors]))
    chosen = survivors[order[: cfg.salient_count]]
    return np.sort(chosen)


def consistency_confidence(score, degree, max_degree):
    """Matching score times the degree normalized by the per-cloud maximum."""
    if max_degree < 0:
        raise ValueError("max_degree must be non-negative")
    if max_degree == 0:
        return np.zeros_like(np.asarray(score, dtype=np.float64) * 1.0)
    return np.asarray(score, dtype=np.float64) * (
        np.asarray(degree, dtype=np.float64) / max_degree
    )


def build_spot(node_idx, neighbor_idx, layer_corrs, confidences, target_index, cfg):
    """Allowed target-key set for one node's spot-guided cross-attention.

    Seeds are the node itself plus its (k_seeds - 1) neighbors of highest
    confidence; the spot is the union of the ``neighborhood_size`` nearest
    target nodes around each seed's current correspondence.
    """
    neighbor_idx = np.asarray(neighbor_idx, dtype=np.int64)
    layer_corrs = np.asarray(layer_corrs, dtype=np.int64)
    confidences = np.asarray(confidences, dtype=np.float64)
    neighbors = neighbor_idx[neighbor_idx != node_idx]
    if len(neighbors):
        order = np.lexsort((neighbors, -confidences[neighbors]))
        seeds = [node_idx] + list(neighbors[order[: cfg.k_seeds - 1]])
    else:
        seeds = [node_idx]
    spot = set()
    for seed in seeds:
        target_node = target_index.points[layer_corrs[seed]]
        idx, _ = target_index.knn(target_node, cfg.neighborhood_size)
        spot.update(int(i) for i in idx)
    return np.array(sorted(spot), dtype=np.int64)
