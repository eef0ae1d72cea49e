"""Synthetic scene generation and the flat binary point dump."""

import math

import numpy as np
import pytest

from ifgkit.pointops import points_in_box
from ifgkit.scenes import (SceneGenConfig, generate_scene, read_scene_bin,
                           write_scene_bin)
from ifgkit.pipeline import make_templates

TEMPLATES = make_templates(k=256, seed=0)


def test_config_validation():
    with pytest.raises(ValueError):
        SceneGenConfig(x_range=(5.0, 5.0))
    with pytest.raises(ValueError):
        SceneGenConfig(occlusion_keep=0.0)


def test_determinism_bitwise():
    cfg = SceneGenConfig()
    a = generate_scene(cfg, 7, TEMPLATES)
    b = generate_scene(cfg, 7, TEMPLATES)
    assert np.array_equal(a.cloud, b.cloud)
    assert a.gt_classes == b.gt_classes
    assert all(np.allclose(x.as_array(), y.as_array())
               for x, y in zip(a.gt_boxes, b.gt_boxes))
    c = generate_scene(cfg, 8, TEMPLATES)
    assert not np.array_equal(a.cloud, c.cloud)


def test_empty_object_scene_is_clutter_only():
    cfg = SceneGenConfig(min_objects=0, max_objects=0)
    s = generate_scene(cfg, 0, TEMPLATES)
    assert s.gt_boxes == [] and s.gt_classes == []
    assert len(s.cloud) > 0  # ground + poles remain


def test_objects_inside_world_and_separated():
    cfg = SceneGenConfig()
    for seed in range(5):
        s = generate_scene(cfg, seed, TEMPLATES)
        for b in s.gt_boxes:
            assert cfg.x_range[0] <= b.x <= cfg.x_range[1]
            assert cfg.y_range[0] <= b.y <= cfg.y_range[1]
            assert math.hypot(b.x, b.y) >= cfg.min_range
        from ifgkit.geom import bev_iou
        for i in range(len(s.gt_boxes)):
            for j in range(i + 1, len(s.gt_boxes)):
                assert bev_iou(s.gt_boxes[i], s.gt_boxes[j]) == 0.0


def test_gt_boxes_contain_points():
    cfg = SceneGenConfig()
    s = generate_scene(cfg, 3, TEMPLATES)
    for b in s.gt_boxes:
        assert len(points_in_box(s.cloud, b, margin=1.1)) >= 3


def test_distance_decay_quarter_at_double_range():
    # expected point count follows inverse-square falloff: ratio ~ 1/4 at 2x
    cfg = SceneGenConfig(min_objects=0, max_objects=0, ground_points=0,
                         poles_per_scene=0)
    from ifgkit.scenes import _decayed_count
    counts = {10.0: [], 20.0: []}
    for seed in range(100):
        rng = np.random.default_rng(seed)
        for d in counts:
            counts[d].append(_decayed_count(10 ** 9, d, cfg, rng))
    ratio = np.mean(counts[20.0]) / np.mean(counts[10.0])
    assert 0.25 * 0.8 <= ratio <= 0.25 * 1.2


def test_scene_bin_roundtrip(tmp_path):
    cloud = np.random.default_rng(0).normal(size=(57, 3))
    path = tmp_path / "scene.bin"
    write_scene_bin(path, cloud)
    back = read_scene_bin(path)
    assert back.shape == (57, 3)
    assert np.allclose(back, cloud, atol=1e-6)  # float32 storage
    assert path.stat().st_size == 57 * 3 * 4


def test_scene_bin_rejects_truncated(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 10)  # not a multiple of 12
    with pytest.raises(ValueError):
        read_scene_bin(path)
