"""Oriented 3D box geometry: corners, rotated IoU, box encoding, NMS.

Boxes are parameterized as (x, y, z, l, w, h, theta) with the center at
(x, y, z), extents (l, w, h) along the local axes, and yaw theta about the
vertical axis. Rotated footprint overlap is computed exactly by
Sutherland-Hodgman clipping of the two BEV rectangles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

AREA_EPS = 1e-12


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"box dims must be positive, got {(self.l, self.w, self.h)}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def bev_diag(self) -> float:
        return math.hypot(self.l, self.w)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.theta])

    @staticmethod
    def from_array(a) -> "Box3D":
        return Box3D(*(float(v) for v in a[:7]))


def heading_aligned(box: Box3D, ref_theta: float) -> Box3D:
    """The same physical box with yaw expressed within pi/2 of ref_theta.

    A box rotated by pi has an identical footprint, so regression targets
    built from IoU matching must pick the pi-equivalent heading nearest the
    reference yaw; otherwise the yaw residual is multimodal (+-pi) and its
    conditional mean collapses to zero.
    """
    d = wrap_angle(box.theta - ref_theta)
    if d >= math.pi / 2:
        d -= math.pi
    elif d < -math.pi / 2:
        d += math.pi
    return Box3D(box.x, box.y, box.z, box.l, box.w, box.h, ref_theta + d)


@dataclass(frozen=True)
class RegressionTarget:
    tx: float
    ty: float
    tz: float
    tw: float
    tl: float
    th: float
    ttheta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz, self.tw, self.tl, self.th, self.ttheta])

    @staticmethod
    def from_array(a) -> "RegressionTarget":
        return RegressionTarget(*(float(v) for v in a[:7]))


def footprint_corners(box: Box3D) -> np.ndarray:
    """BEV footprint corners (4, 2), counter-clockwise."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    hl, hw = 0.5 * box.l, 0.5 * box.w
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.x, box.y])


def box_corners(box: Box3D) -> np.ndarray:
    """All 8 corners (8, 3): bottom face first, then top face, CCW in BEV."""
    bev = footprint_corners(box)
    bottom = np.column_stack([bev, np.full(4, box.z - 0.5 * box.h)])
    top = np.column_stack([bev, np.full(4, box.z + 0.5 * box.h)])
    return np.vstack([bottom, top])


def _polygon_area(poly: list[tuple[float, float]]) -> float:
    # shoelace; positive for CCW vertex order
    n = len(poly)
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def _clip_halfplane(poly, a, b):
    # keep the side left of directed edge a->b (CCW clip polygon interior)
    ax, ay = a
    bx, by = b
    ex, ey = bx - ax, by - ay
    out = []
    n = len(poly)
    for i in range(n):
        px, py = poly[i]
        qx, qy = poly[(i + 1) % n]
        dp = ex * (py - ay) - ey * (px - ax)
        dq = ex * (qy - ay) - ey * (qx - ax)
        if dp >= 0.0:
            out.append((px, py))
        if (dp >= 0.0) != (dq >= 0.0):
            t = dp / (dp - dq)
            out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def footprint_intersection_area(a: Box3D, b: Box3D) -> float:
    """Exact rotated-rectangle overlap area via convex polygon clipping."""
    subject = [tuple(p) for p in footprint_corners(a)]
    clip = [tuple(p) for p in footprint_corners(b)]
    poly = subject
    for i in range(4):
        poly = _clip_halfplane(poly, clip[i], clip[(i + 1) % 4])
        if len(poly) < 3:
            return 0.0
    area = _polygon_area(poly)
    return area if area > AREA_EPS else 0.0


def _far_apart(a: Box3D, b: Box3D) -> bool:
    # circumscribed-circle reject; cheap exit for clearly disjoint footprints
    return math.hypot(a.x - b.x, a.y - b.y) > 0.5 * (a.bev_diag + b.bev_diag)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Footprint IoU of two rotated boxes, in [0, 1]."""
    if _far_apart(a, b):
        return 0.0
    inter = footprint_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.l * a.w + b.l * b.w - inter
    return inter / max(union, AREA_EPS)


def iou3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU: footprint overlap times vertical overlap."""
    if _far_apart(a, b):
        return 0.0
    zlo = max(a.z - 0.5 * a.h, b.z - 0.5 * b.h)
    zhi = min(a.z + 0.5 * a.h, b.z + 0.5 * b.h)
    dz = zhi - zlo
    if dz <= 0.0:
        return 0.0
    inter = footprint_intersection_area(a, b) * dz
    if inter <= AREA_EPS:
        return 0.0
    union = a.volume + b.volume - inter
    return inter / max(union, AREA_EPS)


def encode_box(gt: Box3D, anchor: Box3D) -> RegressionTarget:
    """Residuals of a target box relative to an anchor.

    Center offsets are normalized by the anchor's bottom diagonal
    d = sqrt(l^2 + w^2) in-plane and by its height vertically; dimensions
    are log ratios; the yaw residual is wrapped to [-pi, pi).
    """
    d = anchor.bev_diag
    return RegressionTarget(
        tx=(gt.x - anchor.x) / d,
        ty=(gt.y - anchor.y) / d,
        tz=(gt.z - anchor.z) / anchor.h,
        tw=math.log(gt.w / anchor.w),
        tl=math.log(gt.l / anchor.l),
        th=math.log(gt.h / anchor.h),
        ttheta=wrap_angle(gt.theta - anchor.theta),
    )


def decode_box(t: RegressionTarget, anchor: Box3D) -> Box3D:
    """Exact inverse of encode_box."""
    d = anchor.bev_diag
    return Box3D(
        x=anchor.x + t.tx * d,
        y=anchor.y + t.ty * d,
        z=anchor.z + t.tz * anchor.h,
        l=anchor.l * math.exp(t.tl),
        w=anchor.w * math.exp(t.tw),
        h=anchor.h * math.exp(t.th),
        theta=wrap_angle(anchor.theta + t.ttheta),
    )


def nms(boxes: list[Box3D], scores, iou_threshold: float, max_keep: int) -> list[int]:
    """Greedy BEV-IoU suppression. Returns kept indices, score-descending."""
    if len(boxes) != len(scores):
        raise ValueError("boxes and scores length mismatch")
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        suppressed = False
        for j in kept:
            if bev_iou(boxes[i], boxes[j]) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
            if len(kept) >= max_keep:
                break
    return kept
