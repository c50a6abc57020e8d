import math

import numpy as np
import pytest

from castreg.losses import (
    LossWeights,
    coarse_matching_loss,
    infonce_loss,
    inlier_bce_loss,
    keypoint_l2_loss,
    pose_losses,
    spot_matching_loss,
    total_loss,
)
from castreg.pose import RigidTransform, random_rotation


def random_probs(rng, n, m):
    p = rng.uniform(0.05, 1.0, (n, m))
    return p / p.sum()


# ------------------------------------------------------------ scalar oracles


def test_spot_matching_loss_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, m, g = 6, 7, 4
        layers = [random_probs(rng, n, m) for _ in range(3)]
        pairs = np.stack([rng.integers(0, n, g), rng.integers(0, m, g)], axis=1)
        ov = rng.uniform(0.2, 1.0, g)
        expected = 0.0
        for p in layers:
            s = sum(ov[a] * math.log(p[i, j]) for a, (i, j) in enumerate(pairs))
            expected += -s / ov.sum()
        expected /= len(layers)
        assert spot_matching_loss(layers, pairs, ov) == pytest.approx(expected, abs=1e-9)


def test_coarse_matching_loss_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n, m, g = 5, 6, 3
        p = random_probs(rng, n, m)
        pairs = np.stack([rng.integers(0, n, g), rng.integers(0, m, g)], axis=1)
        ov = rng.uniform(0.2, 1.0, g)
        ox = rng.uniform(0.05, 0.95, n)
        oy = rng.uniform(0.05, 0.95, m)
        ux = np.array([0, 2])
        uy = np.array([1])
        expected = -sum(ov[a] * math.log(p[i, j]) for a, (i, j) in enumerate(pairs)) / ov.sum()
        expected += -np.mean([math.log(1 - ox[k]) for k in ux])
        expected += -np.mean([math.log(1 - oy[k]) for k in uy])
        got = coarse_matching_loss(p, pairs, ov, ox, oy, ux, uy)
        assert got == pytest.approx(expected, abs=1e-9)


def test_infonce_loss_oracle():
    rng = np.random.default_rng(2)
    d = 5
    base = rng.normal(size=(d, d))
    w = base + base.T
    for _ in range(50):
        triples = []
        expected = 0.0
        for _ in range(4):
            anchor, pos = rng.normal(size=d), rng.normal(size=d)
            negs = rng.normal(size=(6, d))
            triples.append((anchor, pos, negs))
            pos_l = anchor @ w @ pos
            neg_ls = [anchor @ w @ neg for neg in negs]
            denom = math.exp(pos_l) + sum(math.exp(v) for v in neg_ls)
            expected += -math.log(math.exp(pos_l) / denom)
        expected /= len(triples)
        assert infonce_loss(triples, w) == pytest.approx(expected, abs=1e-9)


def test_keypoint_l2_loss_oracle():
    rng = np.random.default_rng(3)
    gt = RigidTransform(random_rotation(rng), rng.normal(size=3))
    src = rng.normal(size=(8, 3))
    pred = rng.normal(size=(8, 3))
    expected = np.mean([np.linalg.norm(gt.apply(s[None])[0] - q) for s, q in zip(src, pred)])
    assert keypoint_l2_loss(src, pred, gt) == pytest.approx(expected, abs=1e-9)


def test_inlier_bce_loss_oracle():
    rng = np.random.default_rng(4)
    conf = rng.uniform(0.05, 0.95, 12)
    resid = rng.uniform(0, 0.6, 12)
    r_f = 0.3
    labels = (resid < r_f).astype(float)
    expected = np.mean(
        [-(l * math.log(c) + (1 - l) * math.log(1 - c)) for l, c in zip(labels, conf)]
    )
    assert inlier_bce_loss(conf, resid, r_f) == pytest.approx(expected, abs=1e-9)


def test_pose_losses_oracle():
    rng = np.random.default_rng(5)
    est = RigidTransform(random_rotation(rng), rng.normal(size=3))
    gt = RigidTransform(random_rotation(rng), rng.normal(size=3))
    l_t, l_r = pose_losses(est, gt)
    assert l_t == pytest.approx(np.linalg.norm(est.translation - gt.translation), abs=1e-12)
    assert l_r == pytest.approx(
        np.linalg.norm(est.rotation.T @ gt.rotation - np.eye(3)), abs=1e-12
    )


# --------------------------------------------------- perfect configurations


def test_losses_zero_at_perfect_configurations():
    gt_pairs = np.array([[0, 0], [1, 1]])
    ov = np.ones(2)
    perfect_p = np.eye(2)
    assert spot_matching_loss([perfect_p], gt_pairs, ov) == 0.0
    assert coarse_matching_loss(perfect_p, gt_pairs, ov, np.ones(2), np.ones(2), [], []) == 0.0

    rng = np.random.default_rng(6)
    gt = RigidTransform(random_rotation(rng), rng.normal(size=3))
    src = rng.normal(size=(5, 3))
    assert keypoint_l2_loss(src, gt.apply(src), gt) == 0.0
    assert inlier_bce_loss(np.ones(4), np.zeros(4), 0.3) == 0.0
    assert inlier_bce_loss(np.zeros(4), np.full(4, 9.0), 0.3) == 0.0
    l_t, l_r = pose_losses(gt, gt)
    assert l_t == 0.0
    assert l_r == pytest.approx(0.0, abs=1e-12)
    assert pose_losses(RigidTransform.identity(), RigidTransform.identity()) == (0.0, 0.0)


def test_infonce_approaches_zero_with_dominant_positive():
    d = 4
    w = np.eye(d)
    anchor = np.zeros(d)
    anchor[0] = 10.0
    pos = np.zeros(d)
    pos[0] = 10.0
    negs = -np.ones((5, d))
    assert infonce_loss([(anchor, pos, negs)], w) < 1e-9


# -------------------------------------------------------------- total loss


def test_total_loss_unit_terms():
    terms = {k: 1.0 for k in "scfkitr"}
    assert total_loss(terms, LossWeights()) == pytest.approx(28.3, abs=1e-12)


def test_total_loss_weighting():
    terms = {"s": 2.0, "c": 0.0, "f": 1.0, "k": 3.0, "i": 0.0, "t": 1.0, "r": 0.5}
    w = LossWeights()
    expected = 0.1 * 2 + 1.0 + 3.0 + 5.0 + 20.0 * 0.5
    assert total_loss(terms, w) == pytest.approx(expected, abs=1e-12)


# ----------------------------------------------------------------- validation


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_r=-1.0)
    with pytest.raises(ValueError):
        LossWeights(infonce_w=np.array([[0.0, 1.0], [0.5, 0.0]]))


def test_empty_input_errors():
    with pytest.raises(ValueError):
        spot_matching_loss([np.eye(2)], np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        coarse_matching_loss(np.eye(2), np.zeros((0, 2)), np.zeros(0), [], [], [], [])
    with pytest.raises(ValueError):
        infonce_loss([], np.eye(2))
    with pytest.raises(ValueError):
        keypoint_l2_loss(np.zeros((0, 3)), np.zeros((0, 3)), RigidTransform.identity())
    with pytest.raises(ValueError):
        inlier_bce_loss(np.zeros(0), np.zeros(0), 0.3)
