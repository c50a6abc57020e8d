"""Deterministic, weight-parameterized attention primitives.

All kernels are pure functions of their inputs; weights are created once
from a seed and never updated. Softmaxes subtract the row maximum before
exponentiation for overflow safety.
"""

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "AttentionWeights",
    "RotaryEmbedding3D",
    "init_attention_weights",
    "init_rotary_embedding",
    "softmax",
    "elu_plus_one",
    "vanilla_attention",
    "rotary_matrix",
    "apply_rotary",
    "rotary_self_attention",
    "linear_attention",
    "masked_attention",
    "single_head_local_attention",
    "multi_head_attention",
    "save_weights",
    "load_weights",
]


def softmax(logits, axis=-1):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def elu_plus_one(x):
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass(frozen=True)
class AttentionWeights:
    """Query/key/value projections with an optional output projection."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    n_heads: int = 1
    w_o: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        dim = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v"):
            mat = np.asarray(getattr(self, name), dtype=np.float64)
            if mat.shape != (dim, dim):
                raise ValueError(f"{name} must be square with matching dims")
            if not np.isfinite(mat).all():
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, mat)
        if dim % self.n_heads != 0:
            raise ValueError("feature dim must be divisible by head count")
        if self.w_o is not None:
            w_o = np.asarray(self.w_o, dtype=np.float64)
            if w_o.shape != (dim, dim) or not np.isfinite(w_o).all():
                raise ValueError("w_o must be a finite square matrix")
            object.__setattr__(self, "w_o", w_o)

    @property
    def dim(self):
        return self.w_q.shape[0]


@dataclass(frozen=True)
class RotaryEmbedding3D:
    """Per-channel-pair frequency rows b_i mapping a 3D point to an angle."""

    freqs: np.ndarray  # (dim/2, 3)

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=np.float64)
        if freqs.ndim != 2 or freqs.shape[1] != 3:
            raise ValueError("freqs must have shape (dim/2, 3)")
        object.__setattr__(self, "freqs", freqs)

    @property
    def dim(self):
        return 2 * self.freqs.shape[0]


def init_attention_weights(seed, dim, n_heads=1, with_output=False):
    """Seeded Gaussian initialization with entries scaled by 1/sqrt(dim)."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    mats = [rng.normal(0.0, scale, size=(dim, dim)) for _ in range(4 if with_output else 3)]
    return AttentionWeights(
        mats[0], mats[1], mats[2], n_heads=n_heads,
        w_o=mats[3] if with_output else None,
    )


def init_rotary_embedding(seed, dim, freq_range=(0.1, 10.0)):
    """Frequencies log-uniform over ``freq_range``, random unit directions."""
    if dim % 2 != 0:
        raise ValueError("rotary embedding requires an even feature dim")
    rng = np.random.default_rng(seed)
    mag = np.exp(rng.uniform(np.log(freq_range[0]), np.log(freq_range[1]), size=dim // 2))
    dirs = rng.normal(size=(dim // 2, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return RotaryEmbedding3D(mag[:, None] * dirs)


def vanilla_attention(f_a, f_b, w: AttentionWeights):
    """softmax(F_A W_Q (F_B W_K)^T / sqrt(D)) F_B W_V, single head."""
    f_a = np.asarray(f_a, dtype=np.float64)
    f_b = np.asarray(f_b, dtype=np.float64)
    if f_a.shape[1] != w.dim or f_b.shape[1] != w.dim:
        raise ValueError("feature width does not match the attention weights")
    logits = (f_a @ w.w_q) @ (f_b @ w.w_k).T / np.sqrt(w.dim)
    return softmax(logits, axis=1) @ (f_b @ w.w_v)


def rotary_matrix(p, emb: RotaryEmbedding3D):
    """Block-diagonal matrix of 2x2 rotations by the angles freqs @ p."""
    angles = emb.freqs @ np.asarray(p, dtype=np.float64)
    dim = emb.dim
    out = np.zeros((dim, dim))
    c, s = np.cos(angles), np.sin(angles)
    idx = np.arange(0, dim, 2)
    out[idx, idx] = c
    out[idx + 1, idx + 1] = c
    out[idx, idx + 1] = -s
    out[idx + 1, idx] = s
    return out


def apply_rotary(rows, positions, emb: RotaryEmbedding3D):
    """Right-multiply each row by the block-diagonal rotary matrix of its position."""
    rows = np.asarray(rows, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    angles = positions @ emb.freqs.T  # (n, dim/2)
    c, s = np.cos(angles), np.sin(angles)
    even, odd = rows[:, 0::2], rows[:, 1::2]
    out = np.empty_like(rows)
    out[:, 0::2] = even * c + odd * s
    out[:, 1::2] = -even * s + odd * c
    return out


def rotary_self_attention(f_a, p_a, f_b, p_b, w: AttentionWeights, emb: RotaryEmbedding3D):
    """Vanilla attention with rotary position encoding on queries and keys.

    Logits depend on positions only through relative offsets, so a common
    translation of all positions leaves the output unchanged.
    """
    f_a = np.asarray(f_a, dtype=np.float64)
    f_b = np.asarray(f_b, dtype=np.float64)
    if f_a.shape[1] != w.dim or emb.dim != w.dim:
        raise ValueError("feature width does not match weights/embedding")
    if len(f_a) != len(np.atleast_2d(p_a)) or len(f_b) != len(np.atleast_2d(p_b)):
        raise ValueError("feature and position row counts disagree")
    q = apply_rotary(f_a @ w.w_q, p_a, emb)
    k = apply_rotary(f_b @ w.w_k, p_b, emb)
    logits = q @ k.T / np.sqrt(w.dim)
    return softmax(logits, axis=1) @ (f_b @ w.w_v)


def linear_attention(q, k, v):
    """Kernelized attention phi(Q)(phi(K)^T V) with per-row normalization.

    phi(x) = elu(x) + 1 elementwise; each output row is divided by
    phi(q_i) . sum_j phi(k_j) so the kernel weights form a probability
    vector, mirroring the softmax it replaces.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValueError("incompatible shapes for linear attention")
    fq = elu_plus_one(q)
    fk = elu_plus_one(k)
    numer = fq @ (fk.T @ v)
    denom = fq @ fk.sum(axis=0)
    return numer / denom[:, None]


def _mask_matrix(mask, n_a, n_b):
    mask_arr = np.zeros((n_a, n_b), dtype=bool)
    if isinstance(mask, np.ndarray) and mask.dtype == bool:
        if mask.shape != (n_a, n_b):
            raise ValueError("boolean mask shape mismatch")
        mask_arr = mask
    else:
        for i, allowed in enumerate(mask):
            mask_arr[i, np.asarray(list(allowed), dtype=np.int64)] = True
    if not mask_arr.any(axis=1).all():
        raise ValueError("every query needs at least one allowed key")
    return mask_arr


def masked_attention(f_a, f_b, mask, w: AttentionWeights):
    """Attention restricted per query to an allowed key set.

    ``mask`` is either a boolean (n_a, n_b) matrix or a sequence of index
    collections, one per query. Disallowed keys receive exactly zero
    attention weight.
    """
    f_a = np.asarray(f_a, dtype=np.float64)
    f_b = np.asarray(f_b, dtype=np.float64)
    if f_a.shape[1] != w.dim or f_b.shape[1] != w.dim:
        raise ValueError("feature width does not match the attention weights")
    mask_arr = _mask_matrix(mask, len(f_a), len(f_b))
    logits = (f_a @ w.w_q) @ (f_b @ w.w_k).T / np.sqrt(w.dim)
    logits = np.where(mask_arr, logits, -np.inf)
    return softmax(logits, axis=1) @ (f_b @ w.w_v)


def single_head_local_attention(d_x, cand_points, cand_descs, w_q, w_k):
    """Softmax-weighted convex combination of candidate points/descriptors.

    Returns a virtual point inside the convex hull of the candidates and
    the matching weighted-mean descriptor.
    """
    cand_points = np.asarray(cand_points, dtype=np.float64)
    cand_descs = np.asarray(cand_descs, dtype=np.float64)
    if len(cand_points) == 0:
        raise ValueError("candidate set is empty")
    d_x = np.asarray(d_x, dtype=np.float64)
    logits = (d_x @ w_q) @ (cand_descs @ w_k).T
    weights = softmax(logits)
    return weights @ cand_points, weights @ cand_descs


def multi_head_attention(f_a, f_b, w: AttentionWeights, positions=None, emb=None, mask=None):
    """Multi-head attention over contiguous channel blocks.

    Optional rotary encoding (``positions`` is a (P_A, P_B) tuple and
    ``emb`` has the per-head dimension) and an optional key mask shared by
    all heads. Heads are concatenated and passed through w_o when present.
    """
    f_a = np.asarray(f_a, dtype=np.float64)
    f_b = np.asarray(f_b, dtype=np.float64)
    dim = w.dim
    if f_a.shape[1] != dim or f_b.shape[1] != dim:
        raise ValueError("feature width does not match the attention weights")
    head_dim = dim // w.n_heads
    q = f_a @ w.w_q
    k = f_b @ w.w_k
    v = f_b @ w.w_v
    mask_arr = None
    if mask is not None:
        mask_arr = _mask_matrix(mask, len(f_a), len(f_b))
    out = np.empty((len(f_a), dim))
    for h in range(w.n_heads):
        sl = slice(h * head_dim, (h + 1) * head_dim)
        qh, kh = q[:, sl], k[:, sl]
        if emb is not None:
            qh = apply_rotary(qh, positions[0], emb)
            kh = apply_rotary(kh, positions[1], emb)
        logits = qh @ kh.T / np.sqrt(head_dim)
        if mask_arr is not None:
            logits = np.where(mask_arr, logits, -np.inf)
        out[:, sl] = softmax(logits, axis=1) @ v[:, sl]
    if w.w_o is not None:
        out = out @ w.w_o
    return out


_MAGIC = b"CAWT"
_VERSION = 1


def save_weights(path, arrays, seed=0):
    """Write named float32 arrays with a small reproducibility header."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ I", _VERSION, seed, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f4")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_weights(path):
    """Read arrays written by save_weights; returns (arrays, seed)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, seed, count = struct.unpack("<IQ I", fh.read(16))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(4 * n_items), dtype="<f4")
            arrays[name] = data.reshape(shape).astype(np.float64)
    return arrays, seed
