"""Point-set primitives: farthest point sampling, ball query, point-in-box tests.

Clouds are plain (N, 3) float arrays; all functions are pure and operate on
desk-scale clouds (a few thousand points), so no spatial index is used.
"""

from __future__ import annotations

import math

import numpy as np

from .geom import Box3D


def _as_cloud(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) cloud, got shape {pts.shape}")
    return pts


def farthest_point_sampling(points, m: int) -> np.ndarray:
    """Greedy FPS seeded at index 0; deterministic, ties broken by lowest index.

    If m >= N, returns all indices: FPS order until exhausted (which is all of
    them), i.e. a permutation of range(N) followed by nothing to pad.
    """
    pts = _as_cloud(points)
    n = len(pts)
    if n == 0:
        raise ValueError("empty input")
    if m < 1:
        raise ValueError("m must be >= 1")
    m_eff = min(m, n)
    selected = np.empty(m_eff, dtype=int)
    selected[0] = 0
    min_d2 = np.sum((pts - pts[0]) ** 2, axis=1)
    for i in range(1, m_eff):
        nxt = int(np.argmax(min_d2))  # argmax takes the lowest tied index
        selected[i] = nxt
        min_d2 = np.minimum(min_d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return selected


def ball_query(points, center, radius: float, k_max: int) -> np.ndarray:
    """Indices (in index order, at most k_max) of points within radius of center.

    An empty ball falls back to the single nearest point's index repeated
    k_max times so fixed-size grouping never sees an empty group.
    """
    pts = _as_cloud(points)
    if len(pts) == 0:
        raise ValueError("empty input")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    d2 = np.sum((pts - np.asarray(center, dtype=float)) ** 2, axis=1)
    inside = np.flatnonzero(d2 <= radius * radius)
    if len(inside) == 0:
        return np.full(k_max, int(np.argmin(d2)), dtype=int)
    return inside[:k_max]


def points_in_box(points, box: Box3D, margin: float = 1.0) -> np.ndarray:
    """Indices of points inside the box scaled by margin about its center."""
    if margin < 1.0:
        raise ValueError("margin must be >= 1")
    pts = _as_cloud(points)
    if len(pts) == 0:
        return np.empty(0, dtype=int)
    local = to_box_frame(pts, box)
    half = 0.5 * margin * np.array([box.l, box.w, box.h])
    ok = np.all(np.abs(local) <= half, axis=1)
    return np.flatnonzero(ok)


def to_box_frame(points, box: Box3D) -> np.ndarray:
    """Express points in the box's local frame (center origin, +x heading)."""
    pts = _as_cloud(points) - np.array([box.x, box.y, box.z])
    c, s = math.cos(box.theta), math.sin(box.theta)
    out = pts.copy()
    out[:, 0] = c * pts[:, 0] + s * pts[:, 1]
    out[:, 1] = -s * pts[:, 0] + c * pts[:, 1]
    return out


def from_box_frame(points, box: Box3D) -> np.ndarray:
    """Inverse of to_box_frame."""
    pts = _as_cloud(points)
    c, s = math.cos(box.theta), math.sin(box.theta)
    out = pts.copy()
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1]
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1]
    return out + np.array([box.x, box.y, box.z])
