"""Point-cloud operators: FPS, ball query, box membership, frame transforms."""

import math

import numpy as np
import pytest

from ifgkit.geom import Box3D
from ifgkit.pointops import (ball_query, farthest_point_sampling, from_box_frame,
                             points_in_box, to_box_frame)


def test_fps_forced_by_distances():
    pts = np.array([[0, 0, 0], [1, 0, 0], [10, 0, 0]], dtype=float)
    assert set(farthest_point_sampling(pts, 2)) == {0, 2}


def test_fps_exhaustion_returns_all():
    pts = np.random.default_rng(0).uniform(size=(7, 3))
    assert sorted(farthest_point_sampling(pts, 7)) == list(range(7))
    assert sorted(farthest_point_sampling(pts, 20)) == list(range(7))


def test_fps_greedy_optimality_stepwise():
    # each selection maximizes min-distance to prior selections
    rng = np.random.default_rng(1)
    pts = rng.uniform(size=(64, 3))
    sel = farthest_point_sampling(pts, 12)
    assert sel[0] == 0
    for step in range(1, len(sel)):
        prior = pts[sel[:step]]
        d = np.linalg.norm(pts[:, None] - prior[None], axis=2).min(axis=1)
        chosen = d[sel[step]]
        unselected = np.setdiff1d(np.arange(len(pts)), sel[:step])
        assert chosen >= d[unselected].max() - 1e-12


def test_fps_deterministic():
    pts = np.random.default_rng(2).uniform(size=(50, 3))
    a = farthest_point_sampling(pts, 10)
    b = farthest_point_sampling(pts, 10)
    assert np.array_equal(a, b)


def test_ball_query_threshold():
    pts = np.array([[0.5, 0, 0], [2.0, 0, 0]])
    idx = ball_query(pts, np.zeros(3), 1.0, 8)
    assert list(idx) == [0]


def test_ball_query_truncation_keeps_first_indices():
    pts = np.random.default_rng(3).uniform(-0.1, 0.1, size=(10, 3))
    idx = ball_query(pts, np.zeros(3), 1.0, 4)
    assert list(idx) == [0, 1, 2, 3]


def test_ball_query_empty_falls_back_to_nearest():
    pts = np.array([[5.0, 0, 0], [3.0, 0, 0], [9.0, 0, 0]])
    idx = ball_query(pts, np.zeros(3), 1.0, 3)
    assert list(idx) == [1, 1, 1]


def test_points_in_box_center_and_far():
    box = Box3D(1, 2, 0, 2, 1, 1, 0.3)
    inside = points_in_box(np.array([[1.0, 2.0, 0.0]]), box)
    assert list(inside) == [0]
    far = points_in_box(np.array([[1.0 + 4.0, 2.0, 0.0]]), box)
    assert len(far) == 0


def test_points_in_box_matches_local_frame_oracle():
    rng = np.random.default_rng(4)
    box = Box3D(0.5, -1.0, 0.2, 3.0, 1.5, 1.2, 0.8)
    pts = rng.uniform(-3, 3, size=(1000, 3)) + np.array([box.x, box.y, box.z])
    got = set(points_in_box(pts, box))
    local = to_box_frame(pts, box)
    expect = set(np.flatnonzero(
        (np.abs(local[:, 0]) <= 0.5 * box.l)
        & (np.abs(local[:, 1]) <= 0.5 * box.w)
        & (np.abs(local[:, 2]) <= 0.5 * box.h)))
    assert got == expect


def test_points_in_box_margin_scales_extent():
    box = Box3D(0, 0, 0, 2, 2, 2, 0.0)
    p = np.array([[1.1, 0.0, 0.0]])
    assert len(points_in_box(p, box, margin=1.0)) == 0
    assert len(points_in_box(p, box, margin=1.2)) == 1


def test_box_frame_roundtrip():
    rng = np.random.default_rng(5)
    box = Box3D(1, -2, 0.3, 3, 1.4, 1.1, -1.1)
    pts = rng.uniform(-2, 2, size=(100, 3))
    back = from_box_frame(to_box_frame(pts, box), box)
    assert np.allclose(back, pts, atol=1e-12)


def test_to_box_frame_center_maps_to_origin():
    box = Box3D(4, 5, 6, 2, 1, 1, 0.9)
    local = to_box_frame(np.array([[4.0, 5.0, 6.0]]), box)
    assert np.allclose(local, 0.0, atol=1e-12)
