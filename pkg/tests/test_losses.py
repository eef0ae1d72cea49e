"""Loss stack: elementwise losses, contrastive and template terms, composites."""

import math

import numpy as np
import pytest

from ifgkit import losses
from ifgkit.netcore import Tensor, l2_normalize


def test_smooth_l1_values():
    v, _ = losses.smooth_l1([0.5], [0.0])
    assert v == pytest.approx(0.125, abs=1e-12)
    v, _ = losses.smooth_l1([2.0], [0.0])
    assert v == pytest.approx(1.5, abs=1e-12)


def test_smooth_l1_gradient_branches():
    _, g = losses.smooth_l1([0.5, 2.0, -2.0], [0.0, 0.0, 0.0])
    assert np.allclose(g, [0.5, 1.0, -1.0])


def test_smooth_l1_shape_mismatch():
    with pytest.raises(ValueError):
        losses.smooth_l1_sum(Tensor(np.zeros(3)), np.zeros(4))


def test_focal_confident_correct_limit():
    v, _ = losses.focal_loss([1.0 - 1e-9], [1])
    assert v < 1e-6


def test_focal_half_probability():
    v, _ = losses.focal_loss([0.5], [1])
    assert v == pytest.approx(0.25 * 0.25 * math.log(2.0), rel=1e-9)


def test_bce_confident_correct():
    v, _ = losses.bce([1.0 - 1e-7], [1.0])
    assert v == pytest.approx(1e-7, rel=1e-3)


def test_bce_soft_target():
    v, _ = losses.bce([0.5], [0.5])
    assert v == pytest.approx(math.log(2.0), rel=1e-12)


def test_confidence_label_exact():
    assert losses.confidence_label(0.25) == 0.0
    assert losses.confidence_label(0.5) == 0.5
    assert losses.confidence_label(0.75) == 1.0
    assert losses.confidence_label(0.9) == 1.0
    assert losses.confidence_label(0.0) == 0.0


def test_supcon_identical_pair_is_zero():
    f = Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]))
    loss, skipped = losses.supcon_loss(
        losses.ContrastiveBatch(features=f, labels=[1, 1]))
    assert float(loss.data) == pytest.approx(0.0, abs=1e-12)
    assert skipped == 0


def test_supcon_no_positives_skips_all():
    f = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    loss, skipped = losses.supcon_loss(
        losses.ContrastiveBatch(features=f, labels=[1, 2]))
    assert float(loss.data) == 0.0
    assert skipped == 2


def test_supcon_matches_direct_evaluation():
    feats = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    labels = np.array([1, 1, 2])
    tau = 0.1
    loss, skipped = losses.supcon_loss(
        losses.ContrastiveBatch(features=Tensor(feats), labels=labels, tau=tau))
    # scalar evaluation, term by term
    expected = 0.0
    for i in range(3):
        pos = [j for j in range(3) if j != i and labels[j] == labels[i]]
        if not pos:
            continue
        denom = sum(math.exp(feats[i] @ feats[a] / tau)
                    for a in range(3) if a != i)
        for p in pos:
            expected -= math.log(math.exp(feats[i] @ feats[p] / tau) / denom) / len(pos)
    assert float(loss.data) == pytest.approx(expected, rel=1e-12)
    assert skipped == 1


def test_supcon_requires_unit_features():
    with pytest.raises(ValueError):
        losses.ContrastiveBatch(features=Tensor(np.array([[2.0, 0.0], [1.0, 0.0]])),
                                labels=[1, 1])


def test_supcon_rejects_singleton():
    with pytest.raises(ValueError):
        losses.supcon_loss(losses.ContrastiveBatch(
            features=Tensor(np.array([[1.0, 0.0]])), labels=[1]))


def test_template_loss_zero_residual():
    alpha = Tensor(np.full((1, 4), 0.3))
    batch = losses.TemplateLossBatch(proposal_features=alpha,
                                     target_features=np.full((1, 4), 0.3),
                                     ious=np.array([0.8]))
    loss, n_p = losses.template_loss(batch)
    assert float(loss.data) == 0.0
    assert n_p == 1


def test_template_loss_excludes_low_iou():
    alpha = Tensor(np.ones((1, 4)))
    batch = losses.TemplateLossBatch(proposal_features=alpha,
                                     target_features=np.zeros((1, 4)),
                                     ious=np.array([0.3]))
    loss, n_p = losses.template_loss(batch)
    assert float(loss.data) == 0.0
    assert n_p == 0


def test_template_loss_manual_mean():
    alpha = Tensor(np.array([[0.5, 0.5], [3.0, 3.0]]))
    targets = np.zeros((2, 2))
    ious = np.array([0.8, 0.2])  # second excluded
    loss, n_p = losses.template_loss(losses.TemplateLossBatch(
        proposal_features=alpha, target_features=targets, ious=ious))
    assert n_p == 1
    assert float(loss.data) == pytest.approx(2 * 0.125 / 1, abs=1e-12)


def test_template_mu_boundary_excluded():
    alpha = Tensor(np.ones((1, 2)))
    loss, n_p = losses.template_loss(losses.TemplateLossBatch(
        proposal_features=alpha, target_features=np.zeros((1, 2)),
        ious=np.array([0.55])))
    assert n_p == 0  # strict inequality at mu


def test_rpn_loss_perfect_prediction():
    batch = losses.AnchorBatch(
        cls_pred=Tensor(np.array([1.0 - 1e-9, 1e-9])),
        cls_labels=np.array([1.0, 0.0]),
        reg_pred=Tensor(np.zeros((1, 7))),
        reg_targets=np.zeros((1, 7)))
    total, parts = losses.rpn_loss(batch)
    assert float(total.data) < 1e-6


def test_rpn_loss_background_only_regression_zero():
    batch = losses.AnchorBatch(cls_pred=Tensor(np.array([0.2, 0.3])),
                               cls_labels=np.zeros(2),
                               reg_pred=None, reg_targets=None)
    _, parts = losses.rpn_loss(batch)
    assert parts["reg"] == 0.0


def test_rpn_loss_recomposition():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.1, 0.9, size=8)
    y = np.array([1.0, 0, 1, 0, 0, 1, 0, 0])
    reg_p = rng.normal(size=(3, 7))
    reg_t = rng.normal(size=(3, 7))
    total, parts = losses.rpn_loss(losses.AnchorBatch(
        cls_pred=Tensor(p), cls_labels=y,
        reg_pred=Tensor(reg_p), reg_targets=reg_t))
    cls_v, _ = losses.focal_loss(p, y)
    reg_v, _ = losses.smooth_l1(reg_p, reg_t)
    assert float(total.data) == pytest.approx((cls_v + reg_v) / 3.0, rel=1e-12)
    assert parts["total"] == pytest.approx(parts["cls"] + parts["reg"], rel=1e-12)


def test_rcnn_loss_additive_and_gated():
    zero = Tensor(0.0)
    total, _ = losses.rcnn_loss(zero, zero, zero, zero)
    assert float(total.data) == 0.0
    a, b, c, d = (Tensor(1.0), Tensor(2.0), Tensor(3.0), Tensor(4.0))
    total, parts = losses.rcnn_loss(a, b, c, d,
                                    weights={"temp": 0.0, "contra": 0.0})
    assert float(total.data) == pytest.approx(3.0)
    total, _ = losses.rcnn_loss(a, b, c, d, weights={"temp": 0.5})
    assert float(total.data) == pytest.approx(1 + 2 + 1.5 + 4)
