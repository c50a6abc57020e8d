import numpy as np
import pytest

from castreg.attention import (
    AttentionWeights,
    apply_rotary,
    init_attention_weights,
    init_rotary_embedding,
    linear_attention,
    load_weights,
    masked_attention,
    multi_head_attention,
    rotary_matrix,
    rotary_self_attention,
    save_weights,
    single_head_local_attention,
    softmax,
    vanilla_attention,
)


def scalar_softmax(row):
    m = max(row)
    e = [np.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def oracle_vanilla(f_a, f_b, w):
    q = f_a @ w.w_q
    k = f_b @ w.w_k
    v = f_b @ w.w_v
    out = np.zeros_like(f_a)
    for i in range(len(f_a)):
        logits = [q[i] @ k[j] / np.sqrt(w.dim) for j in range(len(f_b))]
        attn = scalar_softmax(logits)
        for j in range(len(f_b)):
            out[i] += attn[j] * v[j]
    return out


def oracle_linear(q, k, v):
    def phi(x):
        return np.where(x > 0, x + 1.0, np.exp(x))

    fq, fk = phi(q), phi(k)
    out = np.zeros((len(q), v.shape[1]))
    for i in range(len(q)):
        denom = sum(fq[i] @ fk[j] for j in range(len(k)))
        for j in range(len(k)):
            out[i] += (fq[i] @ fk[j]) * v[j] / denom
    return out


def test_vanilla_attention_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        dim = int(rng.choice([4, 8, 16]))
        w = init_attention_weights(int(rng.integers(1e6)), dim)
        f_a = rng.normal(size=(int(rng.integers(1, 8)), dim))
        f_b = rng.normal(size=(int(rng.integers(1, 8)), dim))
        np.testing.assert_allclose(vanilla_attention(f_a, f_b, w), oracle_vanilla(f_a, f_b, w), atol=1e-9)


def test_linear_attention_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.choice([4, 8]))
        q = rng.normal(size=(int(rng.integers(1, 8)), d))
        k = rng.normal(size=(int(rng.integers(1, 8)), d))
        v = rng.normal(size=(len(k), d))
        np.testing.assert_allclose(linear_attention(q, k, v), oracle_linear(q, k, v), atol=1e-9)


def test_masked_attention_oracle_and_exact_zero():
    rng = np.random.default_rng(2)
    for _ in range(100):
        dim = 8
        w = init_attention_weights(int(rng.integers(1e6)), dim)
        n_a, n_b = int(rng.integers(1, 7)), int(rng.integers(2, 7))
        f_a = rng.normal(size=(n_a, dim))
        f_b = rng.normal(size=(n_b, dim))
        mask = rng.uniform(size=(n_a, n_b)) < 0.6
        mask[:, 0] |= ~mask.any(axis=1)  # every query keeps one key
        got = masked_attention(f_a, f_b, mask, w)
        # oracle: restrict softmax to allowed keys per query
        q, k, v = f_a @ w.w_q, f_b @ w.w_k, f_b @ w.w_v
        for i in range(n_a):
            allowed = np.flatnonzero(mask[i])
            logits = [q[i] @ k[j] / np.sqrt(dim) for j in allowed]
            attn = scalar_softmax(logits)
            expected = sum(a * v[j] for a, j in zip(attn, allowed))
            np.testing.assert_allclose(got[i], expected, atol=1e-9)


def test_masked_attention_rejects_empty_rows():
    w = init_attention_weights(0, 4)
    f = np.random.default_rng(0).normal(size=(2, 4))
    mask = np.array([[True, False], [False, False]])
    with pytest.raises(ValueError):
        masked_attention(f, f, mask, w)


def test_rotary_relative_position_identity():
    rng = np.random.default_rng(3)
    emb = init_rotary_embedding(0, 16)
    for _ in range(100):
        p, q = rng.normal(size=3), rng.normal(size=3)
        lhs = rotary_matrix(p, emb).T @ rotary_matrix(q, emb)
        rhs = rotary_matrix(q - p, emb)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_rotary_matrix_is_orthogonal():
    emb = init_rotary_embedding(1, 8)
    m = rotary_matrix(np.array([0.3, -1.2, 2.0]), emb)
    np.testing.assert_allclose(m @ m.T, np.eye(8), atol=1e-12)


def test_apply_rotary_matches_matrix():
    rng = np.random.default_rng(4)
    emb = init_rotary_embedding(2, 12)
    rows = rng.normal(size=(5, 12))
    pos = rng.normal(size=(5, 3))
    fast = apply_rotary(rows, pos, emb)
    for i in range(5):
        np.testing.assert_allclose(fast[i], rows[i] @ rotary_matrix(pos[i], emb), atol=1e-12)


def test_rotary_attention_translation_invariant():
    rng = np.random.default_rng(5)
    dim = 16
    w = init_attention_weights(3, dim)
    emb = init_rotary_embedding(4, dim)
    f_a = rng.normal(size=(6, dim))
    f_b = rng.normal(size=(9, dim))
    p_a = rng.normal(size=(6, 3))
    p_b = rng.normal(size=(9, 3))
    shift = rng.normal(size=3) * 10
    base = rotary_self_attention(f_a, p_a, f_b, p_b, w, emb)
    moved = rotary_self_attention(f_a, p_a + shift, f_b, p_b + shift, w, emb)
    np.testing.assert_allclose(moved, base, atol=1e-6)


def test_multi_head_reduces_to_vanilla_single_head():
    rng = np.random.default_rng(6)
    dim = 8
    w = init_attention_weights(5, dim, n_heads=1)
    f_a = rng.normal(size=(4, dim))
    f_b = rng.normal(size=(6, dim))
    np.testing.assert_allclose(
        multi_head_attention(f_a, f_b, w), vanilla_attention(f_a, f_b, w), atol=1e-12
    )


def test_multi_head_oracle():
    rng = np.random.default_rng(7)
    dim, heads = 8, 4
    w = init_attention_weights(6, dim, n_heads=heads)
    f_a = rng.normal(size=(3, dim))
    f_b = rng.normal(size=(5, dim))
    got = multi_head_attention(f_a, f_b, w)
    hd = dim // heads
    q, k, v = f_a @ w.w_q, f_b @ w.w_k, f_b @ w.w_v
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        for i in range(3):
            logits = [q[i, sl] @ k[j, sl] / np.sqrt(hd) for j in range(5)]
            attn = scalar_softmax(logits)
            expected = sum(a * v[j, sl] for a, j in zip(attn, range(5)))
            np.testing.assert_allclose(got[i, sl], expected, atol=1e-9)


def test_single_head_local_output_in_hull():
    rng = np.random.default_rng(8)
    d = 16
    w_q = rng.normal(size=(d, d))
    w_k = rng.normal(size=(d, d))
    desc = rng.normal(size=d)
    pts = rng.normal(size=(6, 3))
    descs = rng.normal(size=(6, d))
    vp, vd = single_head_local_attention(desc, pts, descs, w_q, w_k)
    assert vp.shape == (3,)
    assert pts.min(axis=0).min() - 1e-9 <= vp.min()
    assert vp.max() <= pts.max(axis=0).max() + 1e-9


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(9)
    s = softmax(rng.normal(size=(5, 7)), axis=1)
    np.testing.assert_allclose(s.sum(axis=1), np.ones(5), atol=1e-12)
    assert np.all(s >= 0)


def test_weights_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    arrays = {"w_q": rng.normal(size=(8, 8)), "bias": rng.normal(size=4)}
    path = tmp_path / "weights.bin"
    save_weights(path, arrays, seed=42)
    loaded, seed = load_weights(path)
    assert seed == 42
    assert set(loaded) == {"w_q", "bias"}
    np.testing.assert_allclose(loaded["w_q"], arrays["w_q"].astype(np.float32))


def test_attention_weights_validation():
    with pytest.raises(ValueError):
        AttentionWeights(np.eye(8), np.eye(8), np.eye(8), n_heads=3)  # 8 % 3 != 0
    with pytest.raises(ValueError):
        AttentionWeights(np.eye(8), np.eye(4), np.eye(8), n_heads=1)
