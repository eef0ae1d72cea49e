"""Independent oracle suites: sampling-based IoU references, brute-force NMS,
encode/decode roundtrips, and finite-difference gradient checks.

Every oracle here deliberately avoids the code paths it verifies: IoU is
re-derived by dense grid rasterization, NMS by a precomputed O(n^2) IoU
table, and gradients by central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import losses
from .geom import Box3D, bev_iou, decode_box, encode_box, iou3d, nms
from .netcore import (FeatureExtractorConfig, IntrinsicFeatureExtractor, MLP,
                      ParamStore, Tensor, dense, grad_check, l2_normalize)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail}"


def random_box(rng: np.random.Generator, spread: float = 4.0) -> Box3D:
    return Box3D(
        x=rng.uniform(-spread, spread),
        y=rng.uniform(-spread, spread),
        z=rng.uniform(-1.0, 1.0),
        l=rng.uniform(0.5, 4.0),
        w=rng.uniform(0.5, 3.0),
        h=rng.uniform(0.5, 2.5),
        theta=rng.uniform(-math.pi, math.pi),
    )


def _inside_footprint(box: Box3D, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx, dy = xs - box.x, ys - box.y
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return (np.abs(lx) <= 0.5 * box.l) & (np.abs(ly) <= 0.5 * box.w)


def _raster_intersection_area(a: Box3D, b: Box3D, resolution: int) -> float:
    """Footprint intersection area by rasterizing the AABB overlap region.

    Only the intersection is discretized; it lives in the overlap of the two
    footprints' axis-aligned bounding boxes, so the grid covers a small area
    at a fine effective cell size. Cell centers count as inside.
    """
    ra, rb = 0.5 * a.bev_diag, 0.5 * b.bev_diag
    lo_x = max(a.x - ra, b.x - rb)
    hi_x = min(a.x + ra, b.x + rb)
    lo_y = max(a.y - ra, b.y - rb)
    hi_y = min(a.y + ra, b.y + rb)
    if lo_x >= hi_x or lo_y >= hi_y:
        return 0.0
    dx = (hi_x - lo_x) / resolution
    dy = (hi_y - lo_y) / resolution
    xs = lo_x + (np.arange(resolution) + 0.5) * dx
    ys = lo_y + (np.arange(resolution) + 0.5) * dy
    gx, gy = np.meshgrid(xs, ys)
    inside = _inside_footprint(a, gx, gy) & _inside_footprint(b, gx, gy)
    return float(np.count_nonzero(inside)) * dx * dy


def grid_bev_iou(a: Box3D, b: Box3D, resolution: int = 400) -> float:
    """IoU reference: rasterized intersection, closed-form areas."""
    inter = _raster_intersection_area(a, b, resolution)
    union = a.l * a.w + b.l * b.w - inter
    return inter / union if union > 0.0 else 0.0


def grid_iou3d(a: Box3D, b: Box3D, resolution: int = 400) -> float:
    """3D IoU reference: boxes are upright, so the vertical overlap and the
    volumes are exact and only the footprint intersection is rasterized."""
    dz = min(a.z + 0.5 * a.h, b.z + 0.5 * b.h) - max(a.z - 0.5 * a.h,
                                                     b.z - 0.5 * b.h)
    if dz <= 0.0:
        return 0.0
    inter = _raster_intersection_area(a, b, resolution) * dz
    union = a.volume + b.volume - inter
    return inter / union if union > 0.0 else 0.0


def brute_force_nms(boxes, scores, iou_threshold, max_keep):
    """Independent reference: full pairwise IoU table, then greedy sweep."""
    n = len(boxes)
    table = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            table[i, j] = table[j, i] = bev_iou(boxes[i], boxes[j])
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(table[i, j] <= iou_threshold for j in kept):
            kept.append(i)
            if len(kept) >= max_keep:
                break
    return kept


# -- suites ----------------------------------------------------------------


def check_geometry(n_pairs: int = 1000, n_nms_sets: int = 500, seed: int = 0,
                   tol: float = 0.01) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    worst_bev = 0.0
    worst_3d = 0.0
    for _ in range(n_pairs):
        a = random_box(rng)
        b = Box3D(a.x + rng.uniform(-2, 2), a.y + rng.uniform(-2, 2),
                  a.z + rng.uniform(-1, 1), *random_box(rng).as_array()[3:])
        worst_bev = max(worst_bev, abs(bev_iou(a, b) - grid_bev_iou(a, b)))
        worst_3d = max(worst_3d, abs(iou3d(a, b) - grid_iou3d(a, b)))
    results.append(CheckResult("bev_iou vs grid oracle", worst_bev <= tol,
                               f"max |delta| = {worst_bev:.5f} over {n_pairs} pairs"))
    results.append(CheckResult("iou3d vs grid oracle", worst_3d <= tol,
                               f"max |delta| = {worst_3d:.5f} over {n_pairs} pairs"))

    mismatches = 0
    for _ in range(n_nms_sets):
        n = int(rng.integers(2, 25))
        center = rng.uniform(-3, 3, size=2)
        boxes = [Box3D(center[0] + rng.uniform(-2, 2), center[1] + rng.uniform(-2, 2),
                       0.0, rng.uniform(0.5, 3), rng.uniform(0.5, 2), 1.0,
                       rng.uniform(-math.pi, math.pi)) for _ in range(n)]
        scores = rng.uniform(size=n)
        thr = rng.uniform(0.1, 0.7)
        if nms(boxes, scores, thr, n) != brute_force_nms(boxes, scores, thr, n):
            mismatches += 1
    results.append(CheckResult("nms vs brute force", mismatches == 0,
                               f"{mismatches} mismatching sets of {n_nms_sets}"))
    return results


def check_encoding(n_pairs: int = 1000, seed: int = 0,
                   tol: float = 1e-9) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        gt, anchor = random_box(rng), random_box(rng)
        back = decode_box(encode_box(gt, anchor), anchor)
        err = np.abs(back.as_array() - gt.as_array())
        err[6] = abs(math.remainder(back.theta - gt.theta, 2.0 * math.pi))
        worst = max(worst, float(err.max()))
    return [CheckResult("encode/decode roundtrip", worst < tol,
                        f"max field error = {worst:.2e} over {n_pairs} pairs")]


def check_gradients(seed: int = 0, tol: float = 1e-4) -> list[CheckResult]:
    """Finite-difference checks for every layer and loss, at small shapes."""
    rng = np.random.default_rng(seed)
    results = []

    def run(name, fn, tensors):
        report = grad_check(fn, tensors, tolerance=tol)
        results.append(CheckResult(
            f"grad: {name}", report["passed"],
            f"max rel error = {report['max_rel_error']:.2e}"))

    # dense layer
    x = Tensor(rng.normal(size=(4, 8)))
    w = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
    b = Tensor(rng.normal(size=8), requires_grad=True)
    run("dense", lambda: (dense(x, w, b) ** 2.0).sum(), [w, b])

    # l2 normalization
    v = Tensor(rng.normal(size=16), requires_grad=True)
    tgt = rng.normal(size=16)
    run("l2_normalize", lambda: ((l2_normalize(v) - Tensor(tgt)) ** 2.0).sum(), [v])

    # smooth L1 (keep residuals away from the |d| = 1 kink)
    pred = Tensor(rng.uniform(-0.8, 0.8, size=12) + 1.3
                  * np.sign(rng.normal(size=12)), requires_grad=True)
    target = np.zeros(12)
    run("smooth_l1", lambda: losses.smooth_l1_sum(pred, target), [pred])

    # focal loss
    p = Tensor(rng.uniform(0.1, 0.9, size=10), requires_grad=True)
    labels = rng.integers(0, 2, size=10)
    run("focal", lambda: losses.focal_loss_sum(p, labels), [p])

    # binary cross entropy with soft targets
    p2 = Tensor(rng.uniform(0.1, 0.9, size=10), requires_grad=True)
    soft = rng.uniform(size=10)
    run("bce", lambda: losses.bce_sum(p2, soft), [p2])

    # supervised contrastive loss w.r.t. pre-normalization features
    raw = Tensor(rng.normal(size=(6, 8)), requires_grad=True)
    clabels = np.array([1, 1, 2, 2, 0, 0])

    def supcon_fn():
        batch = losses.ContrastiveBatch(features=l2_normalize(raw),
                                        labels=clabels, tau=0.1)
        loss, _ = losses.supcon_loss(batch)
        return loss

    run("supcon", supcon_fn, [raw])

    # template loss
    alpha = Tensor(rng.uniform(-0.8, 0.8, size=(5, 6)), requires_grad=True)
    targets = np.zeros((5, 6))
    ious = np.array([0.8, 0.3, 0.9, 0.6, 0.1])

    def temp_fn():
        batch = losses.TemplateLossBatch(proposal_features=alpha,
                                         target_features=targets, ious=ious)
        return losses.template_loss(batch)[0]

    run("template", temp_fn, [alpha])

    # composite RPN loss through a small dense layer
    feats = rng.normal(size=(6, 5))
    w2 = Tensor(rng.normal(size=(5, 8)) * 0.5, requires_grad=True)
    b2 = Tensor(rng.normal(size=8) * 0.1, requires_grad=True)
    anchor_labels = np.array([1.0, 0.0, 1.0, 0.0, 0.0, 1.0])
    reg_targets = rng.normal(size=(3, 7)) * 0.3

    def rpn_fn():
        out = dense(Tensor(feats), w2, b2)
        scores = out[:, 0].sigmoid()
        deltas = out[:, 1:]
        batch = losses.AnchorBatch(cls_pred=scores, cls_labels=anchor_labels,
                                   reg_pred=deltas[np.array([0, 2, 5])],
                                   reg_targets=reg_targets, n_fg=3)
        return losses.rpn_loss(batch)[0]

    run("rpn composite", rpn_fn, [w2, b2])

    # intrinsic feature extractor end-to-end, tiny configuration
    cfg = FeatureExtractorConfig(m=6, radii=(0.3, 0.6), group_sizes=(4, 6),
                                 local_dim=5, out_dim=4, fc_sizes=(8,))
    store = ParamStore()
    extractor = IntrinsicFeatureExtractor(store, cfg, np.random.default_rng(seed))
    for t in store.tensors():  # push pre-activations off exact ReLU kinks
        t.data = t.data + rng.normal(0.0, 0.05, size=t.data.shape)
    pts = np.random.default_rng(seed + 1).uniform(-1, 1, size=(24, 3))
    tgt2 = np.random.default_rng(seed + 2).normal(size=4)
    run("intrinsic extractor",
        lambda: ((extractor(pts) - Tensor(tgt2)) ** 2.0).sum(),
        store.tensors())
    return results


def run_all(seed: int = 0) -> list[CheckResult]:
    return (check_geometry(seed=seed) + check_encoding(seed=seed)
            + check_gradients(seed=seed))
