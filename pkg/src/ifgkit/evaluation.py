"""Detection evaluation: label I/O, PR curves, interpolated AP, distance buckets.

Labels use the KITTI text layout (one object per line, 15 fields plus an
optional score). Matching is greedy in score order against 3D IoU, each
ground truth matchable once, restricted to the same frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import Box3D, iou3d
from .templates import CLASS_IDS, CLASS_NAMES


@dataclass(frozen=True)
class LabeledBox:
    box: Box3D
    class_id: int
    score: float | None = None
    frame: int = 0


@dataclass
class EvalConfig:
    iou_thresholds: dict = field(default_factory=lambda: {1: 0.7, 2: 0.5, 3: 0.5})
    recall_mode: str = "R11"
    distance_buckets: tuple = ((0.0, 20.0), (20.0, 40.0), (40.0, math.inf))

    def __post_init__(self):
        if self.recall_mode not in ("R11", "R40"):
            raise ValueError("recall_mode must be R11 or R40")
        for (lo, hi), (lo2, _) in zip(self.distance_buckets, self.distance_buckets[1:]):
            if hi != lo2:
                raise ValueError("buckets must be ordered, disjoint, and covering")


class LabelParseError(ValueError):
    pass


def parse_labels(text: str, frame: int = 0) -> list[LabeledBox]:
    """Parse KITTI-style label lines.

    Fields: type trunc occl alpha bx1 by1 bx2 by2 h w l x y z ry [score].
    (h, w, l) map to box (l, w, h); (x, y, z) is the bottom center, lifted
    by h/2 to the box center. Unknown types are skipped with a diagnostic
    collected on the returned list's side channel (stderr-free).
    """
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) not in (15, 16):
            raise LabelParseError(
                f"line {lineno}: expected 15 or 16 fields, got {len(tokens)}"
            )
        obj_type = tokens[0]
        try:
            vals = [float(t) for t in tokens[1:]]
        except ValueError as e:
            raise LabelParseError(f"line {lineno}: {e}") from None
        if obj_type not in CLASS_IDS:
            continue
        h, w, l = vals[7], vals[8], vals[9]
        x, y, z, ry = vals[10], vals[11], vals[12], vals[13]
        score = vals[14] if len(vals) == 15 else None
        box = Box3D(x=x, y=y, z=z + 0.5 * h, l=l, w=w, h=h, theta=ry)
        out.append(LabeledBox(box=box, class_id=CLASS_IDS[obj_type], score=score,
                              frame=frame))
    return out


def serialize_labels(objects: list[LabeledBox]) -> str:
    """Inverse of parse_labels; unused 2D fields written as 0."""
    lines = []
    for obj in objects:
        b = obj.box
        fields = [CLASS_NAMES[obj.class_id], "0", "0", "0", "0", "0", "0", "0",
                  f"{b.h:.6f}", f"{b.w:.6f}", f"{b.l:.6f}",
                  f"{b.x:.6f}", f"{b.y:.6f}", f"{b.z - 0.5 * b.h:.6f}",
                  f"{b.theta:.6f}"]
        if obj.score is not None:
            fields.append(f"{obj.score:.6f}")
        lines.append(" ".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


def _score(d: LabeledBox) -> float:
    return 0.0 if d.score is None else d.score


def _greedy_match(detections: list[LabeledBox], gts: list[LabeledBox],
                  iou_threshold: float):
    """Score-descending greedy matching; score-less detections rank last."""
    order = sorted(range(len(detections)), key=lambda i: (-_score(detections[i]), i))
    taken = [False] * len(gts)
    matched = [-1] * len(detections)
    for i in order:
        det = detections[i]
        best, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j] or gt.frame != det.frame:
                continue
            v = iou3d(det.box, gt.box)
            if v >= iou_threshold and v > best:
                best, best_j = v, j
        if best_j >= 0:
            taken[best_j] = True
            matched[i] = best_j
    return order, matched


def pr_curve(detections: list[LabeledBox], gts: list[LabeledBox],
             class_id: int, iou_threshold: float) -> np.ndarray:
    """Cumulative (precision, recall) after each detection, score-descending."""
    dets = [d for d in detections if d.class_id == class_id]
    gt = [g for g in gts if g.class_id == class_id]
    if not dets:
        return np.zeros((0, 2))
    order, matched = _greedy_match(dets, gt, iou_threshold)
    n_gt = len(gt)
    points = []
    tp = 0
    for rank, i in enumerate(order, start=1):
        if matched[i] >= 0:
            tp += 1
        precision = tp / rank
        recall = tp / n_gt if n_gt else 0.0
        points.append((precision, recall))
    return np.array(points)


def average_precision(pr_points: np.ndarray, mode: str = "R11") -> float:
    """Interpolated AP over 11 or 40 evenly spaced recall positions.

    At each recall position r the interpolated precision is the maximum
    precision among points with recall >= r, or 0 beyond the curve's reach.
    """
    if mode == "R11":
        recalls = np.linspace(0.0, 1.0, 11)
    elif mode == "R40":
        recalls = np.arange(1, 41) / 40.0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if len(pr_points) == 0:
        return 0.0
    acc = 0.0
    for r in recalls:
        eligible = pr_points[pr_points[:, 1] >= r - 1e-12]
        acc += eligible[:, 0].max() if len(eligible) else 0.0
    return acc / len(recalls)


def evaluate_class(detections, gts, class_id: int, cfg: EvalConfig):
    """AP for one class, or None when no GT of that class exists."""
    if not any(g.class_id == class_id for g in gts):
        return None
    curve = pr_curve(detections, gts, class_id, cfg.iou_thresholds[class_id])
    return average_precision(curve, cfg.recall_mode)


def _bucket_of(distance: float, buckets) -> int:
    for k, (lo, hi) in enumerate(buckets):
        if lo <= distance < hi:
            return k
    return len(buckets) - 1


def bucketed_ap(detections: list[LabeledBox], gts: list[LabeledBox],
                cfg: EvalConfig) -> dict[int, list[float | None]]:
    """Per-class, per-distance-bucket AP.

    GTs bucket by planar center distance from the origin; a detection goes
    to its matched GT's bucket when matched, otherwise to its own distance's
    bucket.
    """
    result: dict[int, list[float | None]] = {}
    for class_id in CLASS_NAMES:
        dets = [d for d in detections if d.class_id == class_id]
        gt = [g for g in gts if g.class_id == class_id]
        _, matched = _greedy_match(dets, gt, cfg.iou_thresholds[class_id])
        det_bucket = []
        for d, j in zip(dets, matched):
            ref = gt[j].box if j >= 0 else d.box
            det_bucket.append(_bucket_of(math.hypot(ref.x, ref.y), cfg.distance_buckets))
        gt_bucket = [_bucket_of(math.hypot(g.box.x, g.box.y), cfg.distance_buckets)
                     for g in gt]
        aps: list[float | None] = []
        for k in range(len(cfg.distance_buckets)):
            sub_gt = [g for g, b in zip(gt, gt_bucket) if b == k]
            sub_det = [d for d, b in zip(dets, det_bucket) if b == k]
            if not sub_gt:
                aps.append(None)
                continue
            curve = pr_curve(sub_det, sub_gt, class_id, cfg.iou_thresholds[class_id])
            aps.append(average_precision(curve, cfg.recall_mode))
        result[class_id] = aps
    return result


def results_csv(rows: list[dict]) -> str:
    """CSV of evaluation rows: class,bucket,mode,ap."""
    out = ["class,bucket,mode,ap"]
    for r in rows:
        ap = "" if r["ap"] is None else f"{r['ap']:.6f}"
        out.append(f"{r['class']},{r['bucket']},{r['mode']},{ap}")
    return "\n".join(out) + "\n"
