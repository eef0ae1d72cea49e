"""Loss stack for the two-stage detector.

All losses are built on netcore tensors, so analytic gradients come from the
same backward passes the training loop uses. Thin numpy wrappers expose
(value, gradient) pairs for standalone use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netcore import Tensor

PROB_EPS = 1e-7
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0


def _clamp(t: Tensor, lo: float, hi: float) -> Tensor:
    t = t.where(t.data >= lo, Tensor(np.full(t.shape, lo)))
    return t.where(t.data <= hi, Tensor(np.full(t.shape, hi)))


def _abs(t: Tensor) -> Tensor:
    return t.where(t.data >= 0.0, -t)


# -- elementwise losses (tape versions return a scalar tensor) -------------


def smooth_l1_sum(pred: Tensor, target) -> Tensor:
    """Sum of elementwise 0.5 d^2 for |d| < 1, else |d| - 0.5."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    quad = 0.5 * d * d
    lin = _abs(d) - 0.5
    return quad.where(np.abs(d.data) < 1.0, lin).sum()


def focal_loss_sum(p: Tensor, labels) -> Tensor:
    """Binary focal loss, summed; alpha=0.25, gamma=2."""
    y = np.asarray(labels, dtype=float)
    p = _clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    y_t = Tensor(y)
    p_t = p * y_t + (1.0 - p) * (1.0 - y_t)
    alpha_t = Tensor(FOCAL_ALPHA * y + (1.0 - FOCAL_ALPHA) * (1.0 - y))
    return (-1.0 * alpha_t * (1.0 - p_t) ** FOCAL_GAMMA * p_t.log()).sum()


def bce_sum(p: Tensor, targets) -> Tensor:
    """Binary cross entropy with soft targets in [0, 1], summed."""
    y = np.asarray(targets, dtype=float)
    p = _clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    y_t = Tensor(y)
    return (-1.0 * (y_t * p.log() + (1.0 - y_t) * (1.0 - p).log())).sum()


def _value_and_grad(make_input, fn):
    t = make_input
    out = fn(t)
    out.backward()
    return float(out.data), t.grad


def smooth_l1(pred, target):
    """(value, gradient w.r.t. pred) of the summed Smooth L1 loss."""
    t = Tensor(np.asarray(pred, dtype=float), requires_grad=True)
    return _value_and_grad(t, lambda x: smooth_l1_sum(x, np.asarray(target, dtype=float)))


def focal_loss(p, label):
    """(value, gradient w.r.t. p) of the focal loss."""
    t = Tensor(np.asarray(p, dtype=float), requires_grad=True)
    return _value_and_grad(t, lambda x: focal_loss_sum(x, label))


def bce(p, y):
    """(value, gradient w.r.t. p) of the binary cross entropy."""
    t = Tensor(np.asarray(p, dtype=float), requires_grad=True)
    return _value_and_grad(t, lambda x: bce_sum(x, y))


def confidence_label(iou: float) -> float:
    """Soft confidence target: min(1, max(0, 2*IoU - 0.5))."""
    return float(np.minimum(1.0, np.maximum(0.0, 2.0 * np.asarray(iou) - 0.5)))


# -- supervised contrastive loss ------------------------------------------


@dataclass
class ContrastiveBatch:
    features: Tensor  # (N, beta) unit vectors
    labels: np.ndarray  # (N,) class per proposal, 0 = background
    tau: float = 0.1

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.features.data.ndim != 2 or len(self.features.data) != len(self.labels):
            raise ValueError("features must be (N, beta) matching labels")
        norms = np.linalg.norm(self.features.data, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("features must be unit-normalized")


def supcon_loss(batch: ContrastiveBatch):
    """Supervised contrastive loss over a labeled proposal batch.

    For each anchor i the positives are the other proposals sharing its
    label; anchors with no positives contribute 0 and are counted in the
    returned skipped-anchor diagnostic. Returns (scalar tensor, skipped).
    """
    n = len(batch.labels)
    if n < 2:
        raise ValueError("need at least 2 proposals")
    f = batch.features
    not_self = ~np.eye(n, dtype=bool)
    pos_mask = (batch.labels[:, None] == batch.labels[None, :]) & not_self
    pos_counts = pos_mask.sum(axis=1)
    skipped = int((pos_counts == 0).sum())

    sims = (f @ f.transpose()) * (1.0 / batch.tau)
    # stable log-sum-exp over A(i): subtract each row's max over non-self entries
    masked = np.where(not_self, sims.data, -np.inf)
    row_max = masked.max(axis=1)
    shifted = sims - Tensor(row_max[:, None])
    exp_masked = shifted.exp() * Tensor(not_self.astype(float))
    log_z = exp_masked.sum(axis=1).log()  # row max cancels against shifted sims
    log_prob = shifted - log_z.reshape(n, 1)

    row_weight = np.where(pos_counts > 0, 1.0 / np.maximum(pos_counts, 1), 0.0)
    weight = Tensor(pos_mask.astype(float) * row_weight[:, None])
    loss = -1.0 * (weight * log_prob).sum()
    return loss, skipped


@dataclass
class TemplateLossBatch:
    proposal_features: Tensor  # (N, d)
    target_features: np.ndarray  # (N, d), treated as constants
    ious: np.ndarray  # (N,)
    mu: float = 0.55

    def __post_init__(self):
        self.target_features = np.asarray(self.target_features, dtype=float)
        self.ious = np.asarray(self.ious, dtype=float)
        if not 0.0 < self.mu < 1.0:
            raise ValueError("mu must be in (0, 1)")
        if self.proposal_features.data.shape != self.target_features.shape:
            raise ValueError("proposal and target feature shapes differ")


def template_loss(batch: TemplateLossBatch):
    """Smooth L1 pull of participating proposal features toward their targets.

    Only proposals with IoU > mu participate; the sum is normalized by the
    participant count. Returns (scalar tensor, participant count).
    """
    mask = batch.ious > batch.mu
    n_p = int(mask.sum())
    if n_p == 0:
        return Tensor(0.0), 0
    idx = np.flatnonzero(mask)
    participating = batch.proposal_features[idx]
    loss = smooth_l1_sum(participating, batch.target_features[idx]) * (1.0 / n_p)
    return loss, n_p


# -- composite losses ------------------------------------------------------


@dataclass
class AnchorBatch:
    cls_pred: Tensor  # (N,) per-anchor foreground probability
    cls_labels: np.ndarray  # (N,) 1 for foreground anchors, 0 otherwise
    reg_pred: Tensor | None  # (N_fg, 7) residual predictions for foreground anchors
    reg_targets: np.ndarray | None  # (N_fg, 7)
    n_fg: int = field(default=-1)

    def __post_init__(self):
        self.cls_labels = np.asarray(self.cls_labels, dtype=float)
        if self.n_fg < 0:
            self.n_fg = int((self.cls_labels >= 1).sum())
        if self.reg_pred is not None and len(self.reg_pred.data) != self.n_fg:
            raise ValueError("regression entries must match the foreground count")


def rpn_loss(batch: AnchorBatch):
    """Focal classification plus foreground-only Smooth L1 regression,
    normalized by the foreground anchor count.

    Returns (total tensor, breakdown dict of floats).
    """
    norm = 1.0 / max(batch.n_fg, 1)
    cls_term = focal_loss_sum(batch.cls_pred, batch.cls_labels) * norm
    if batch.n_fg > 0 and batch.reg_pred is not None and len(batch.reg_pred.data) > 0:
        reg_term = smooth_l1_sum(batch.reg_pred, batch.reg_targets) * norm
    else:
        reg_term = Tensor(0.0)
    total = cls_term + reg_term
    return total, {"cls": float(cls_term.data), "reg": float(reg_term.data),
                   "total": float(total.data)}


def rcnn_loss(conf_loss: Tensor, reg_loss: Tensor, temp_loss: Tensor,
              contra_loss: Tensor, weights: dict | None = None):
    """Weighted sum of the four refinement-stage components."""
    w = {"conf": 1.0, "reg": 1.0, "temp": 1.0, "contra": 1.0}
    if weights:
        w.update(weights)
    total = (w["conf"] * conf_loss + w["reg"] * reg_loss
             + w["temp"] * temp_loss + w["contra"] * contra_loss)
    breakdown = {"conf": float(conf_loss.data), "reg": float(reg_loss.data),
                 "temp": float(temp_loss.data), "contra": float(contra_loss.data),
                 "total": float(total.data)}
    return total, breakdown
