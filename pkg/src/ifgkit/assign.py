"""IoU-based target assignment for anchors and proposals.

Proposal matching uses volumetric (3D) IoU throughout so the contrastive,
template, and confidence labels all share one matching pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Box3D, encode_box, heading_aligned, iou3d

IGNORED = -1


@dataclass
class AssignmentConfig:
    fg_threshold: float = 0.75  # contrastive foreground threshold
    bg_threshold: float = 0.25  # contrastive background threshold
    anchor_pos: dict = field(default_factory=lambda: {1: 0.45, 2: 0.35, 3: 0.35})
    anchor_neg: dict = field(default_factory=lambda: {1: 0.30, 2: 0.20, 3: 0.20})
    train_nms_threshold: float = 0.8
    train_keep: int = 128
    positive_sample_iou: float = 0.55

    def __post_init__(self):
        if not 0.0 <= self.bg_threshold < self.fg_threshold <= 1.0:
            raise ValueError("need 0 <= bg < fg <= 1")
        for c in self.anchor_pos:
            if not self.anchor_neg[c] < self.anchor_pos[c]:
                raise ValueError("anchor_neg must be below anchor_pos")


@dataclass
class ProposalLabel:
    class_label: int  # 0 background, >= 1 foreground class, IGNORED otherwise
    matched_gt_index: int  # -1 when no GT
    matched_iou: float


def match_proposals_to_gt(proposals: list[Box3D], gt_boxes: list[Box3D]):
    """Per proposal: (best 3D IoU over GTs, argmax GT index or -1)."""
    n = len(proposals)
    ious = np.zeros(n)
    idx = np.full(n, -1, dtype=int)
    if not gt_boxes:
        return ious, idx
    for i, p in enumerate(proposals):
        best, best_j = 0.0, -1
        for j, g in enumerate(gt_boxes):
            v = iou3d(p, g)
            if v > best:
                best, best_j = v, j
        ious[i] = best
        idx[i] = best_j if best > 0.0 else 0
    return ious, idx


def label_proposals(matched_ious, matched_idx, gt_classes,
                    cfg: AssignmentConfig) -> list[ProposalLabel]:
    """Three-way labeling: foreground above fg_threshold (label = matched GT
    class), background below bg_threshold, IGNORED in between."""
    out = []
    for iou, j in zip(matched_ious, matched_idx):
        iou = float(iou)
        if iou > cfg.fg_threshold:
            out.append(ProposalLabel(int(gt_classes[j]), int(j), iou))
        elif iou < cfg.bg_threshold:
            out.append(ProposalLabel(0, int(j), iou))
        else:
            out.append(ProposalLabel(IGNORED, int(j), iou))
    return out


def anchor_targets(anchors: list[Box3D], anchor_classes, gt_boxes: list[Box3D],
                   gt_classes, cfg: AssignmentConfig,
                   prefilter_radius: float | None = None):
    """Per-anchor class labels and regression targets.

    An anchor is positive when its best same-class IoU reaches the class's
    positive threshold (label = GT class, target = encoded residual),
    negative below the negative threshold, IGNORED between. Each GT forces
    its best-IoU same-class anchor positive so no GT goes unassigned.

    Returns (labels (N,), targets (N, 7), matched_gt (N,)). Labels use 0 for
    negative, IGNORED for in-between.
    """
    n = len(anchors)
    labels = np.zeros(n, dtype=int)
    targets = np.zeros((n, 7))
    matched = np.full(n, -1, dtype=int)
    if not gt_boxes:
        return labels, targets, matched

    centers = np.array([[a.x, a.y] for a in anchors])
    diags = np.array([a.bev_diag for a in anchors])
    best_iou = np.zeros(n)
    gt_best_anchor = {}

    for j, (g, gc) in enumerate(zip(gt_boxes, gt_classes)):
        reach = 0.5 * (diags + g.bev_diag)
        if prefilter_radius is not None:
            reach = reach + prefilter_radius
        near = np.flatnonzero(
            np.hypot(centers[:, 0] - g.x, centers[:, 1] - g.y) <= reach
        )
        gt_best, gt_best_i = 0.0, -1
        for i in near:
            if anchor_classes[i] != gc:
                continue
            v = iou3d(anchors[i], g)
            if v > best_iou[i]:
                best_iou[i] = v
                matched[i] = j
            if v > gt_best:
                gt_best, gt_best_i = v, i
        if gt_best_i >= 0:
            gt_best_anchor[j] = (gt_best_i, gt_best)

    for i in range(n):
        cls = anchor_classes[i]
        if best_iou[i] >= cfg.anchor_pos[cls]:
            labels[i] = int(gt_classes[matched[i]])
        elif best_iou[i] < cfg.anchor_neg[cls]:
            labels[i] = 0
        else:
            labels[i] = IGNORED

    # lower-bound rule: the best anchor for each GT is positive regardless
    for j, (i, v) in gt_best_anchor.items():
        if v > 0.0:
            labels[i] = int(gt_classes[j])
            matched[i] = j

    for i in np.flatnonzero(labels >= 1):
        gt = heading_aligned(gt_boxes[matched[i]], anchors[i].theta)
        targets[i] = encode_box(gt, anchors[i]).as_array()
    return labels, targets, matched


def sample_balanced(labels: list[ProposalLabel], n: int = 128,
                    pos_iou: float = 0.55, seed: int = 0) -> np.ndarray:
    """Up to n/2 positives (matched IoU >= pos_iou) plus negatives to fill.

    Seeded uniform choice without replacement; scarce positives are backfilled
    with negatives, so the result has min(n, available) unique indices.
    """
    rng = np.random.default_rng(seed)
    ious = np.array([lb.matched_iou for lb in labels])
    pos = np.flatnonzero(ious >= pos_iou)
    neg = np.flatnonzero(ious < pos_iou)
    n_pos = min(len(pos), n // 2)
    n_neg = min(len(neg), n - n_pos)
    chosen_pos = rng.choice(pos, size=n_pos, replace=False) if n_pos else np.empty(0, int)
    chosen_neg = rng.choice(neg, size=n_neg, replace=False) if n_neg else np.empty(0, int)
    # top up with leftover positives if negatives are scarce
    remaining = n - n_pos - n_neg
    if remaining > 0 and len(pos) > n_pos:
        extra = rng.choice(np.setdiff1d(pos, chosen_pos),
                           size=min(remaining, len(pos) - n_pos), replace=False)
        chosen_pos = np.concatenate([chosen_pos, extra])
    return np.sort(np.concatenate([chosen_pos, chosen_neg]).astype(int))
