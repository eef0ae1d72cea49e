"""Synthetic LiDAR scene generation.

Objects are template surfaces placed on the ground plane, thinned by a
sensor-facing visibility filter (the far half of each object is dropped,
as a single scan would see), then subsampled with inverse-square distance
decay and perturbed with measurement noise. Clutter adds ground returns
and vertical pole confusers that resemble pedestrians in footprint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import Box3D, bev_iou
from .templates import CANONICAL_DIMS, Template, adjust_template

MAX_PLACEMENT_ATTEMPTS = 200


@dataclass
class SceneGenConfig:
    x_range: tuple[float, float] = (0.0, 40.0)
    y_range: tuple[float, float] = (-20.0, 20.0)
    z_range: tuple[float, float] = (-1.5, 1.5)
    min_objects: int = 1
    max_objects: int = 8
    dim_jitter: float = 0.08  # relative sigma on class dims
    ref_distance: float = 10.0  # distance at which an object keeps ref_points
    ref_points: int = 220  # expected points at ref_distance
    occlusion_keep: float = 0.85  # random keep fraction after visibility filter
    ground_points: int = 400
    poles_per_scene: int = 6
    noise_sigma: float = 0.02
    min_range: float = 4.0  # objects closer than this to the sensor are not placed

    def __post_init__(self):
        if self.x_range[0] >= self.x_range[1] or self.y_range[0] >= self.y_range[1]:
            raise ValueError("degenerate world extents")
        if self.ref_points <= 0 or self.ground_points < 0:
            raise ValueError("densities must be positive")
        if not 0.0 < self.occlusion_keep <= 1.0:
            raise ValueError("occlusion_keep must be in (0, 1]")


@dataclass
class SceneSample:
    cloud: np.ndarray  # (N, 3)
    gt_boxes: list[Box3D]
    gt_classes: list[int]
    seed: int
    dropped_gt: int = 0  # boxes discarded for ending up with no points


def _visibility_filter(points: np.ndarray, center_xy: np.ndarray) -> np.ndarray:
    # keep the sensor-facing half: points no farther out (radially) than the center
    r_pts = np.hypot(points[:, 0], points[:, 1])
    r_c = math.hypot(center_xy[0], center_xy[1])
    return points[r_pts <= r_c]


def _decayed_count(n_available: int, distance: float, cfg: SceneGenConfig,
                   rng: np.random.Generator) -> int:
    expected = cfg.ref_points * (cfg.ref_distance / max(distance, 1.0)) ** 2
    n = int(rng.poisson(expected * cfg.occlusion_keep))
    return min(n, n_available)


def _place_box(cfg: SceneGenConfig, rng: np.random.Generator, dims,
               existing: list[Box3D]) -> Box3D | None:
    l, w, h = dims
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        x = rng.uniform(cfg.x_range[0] + l, cfg.x_range[1] - l)
        y = rng.uniform(cfg.y_range[0] + l, cfg.y_range[1] - l)
        if math.hypot(x, y) < cfg.min_range:
            continue
        theta = rng.uniform(-math.pi, math.pi)
        box = Box3D(x, y, cfg.z_range[0] + 0.5 * h, l, w, h, theta)
        if all(bev_iou(box, other) == 0.0 for other in existing):
            return box
    return None


def generate_scene(cfg: SceneGenConfig, seed: int,
                   class_templates: dict[int, Template]) -> SceneSample:
    """Deterministic scene for a seed: placed objects, clutter, noise."""
    rng = np.random.default_rng(seed)
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    boxes: list[Box3D] = []
    classes: list[int] = []
    chunks: list[np.ndarray] = []
    dropped = 0

    for _ in range(n_obj):
        class_id = int(rng.integers(1, 4))
        base = np.array(CANONICAL_DIMS[class_id])
        dims = base * np.clip(1.0 + cfg.dim_jitter * rng.normal(size=3), 0.7, 1.3)
        box = _place_box(cfg, rng, dims, boxes)
        if box is None:
            raise RuntimeError(
                f"could not place {n_obj} objects in the configured extents"
            )
        pts = adjust_template(class_templates[class_id], box)
        pts = _visibility_filter(pts, np.array([box.x, box.y]))
        d = math.hypot(box.x, box.y)
        n_keep = _decayed_count(len(pts), d, cfg, rng)
        if n_keep == 0:
            dropped += 1
            continue
        keep = rng.choice(len(pts), size=n_keep, replace=False)
        pts = pts[keep] + rng.normal(0.0, cfg.noise_sigma, size=(n_keep, 3))
        boxes.append(box)
        classes.append(class_id)
        chunks.append(pts)

    # ground returns
    if cfg.ground_points > 0:
        gx = rng.uniform(cfg.x_range[0], cfg.x_range[1], size=cfg.ground_points)
        gy = rng.uniform(cfg.y_range[0], cfg.y_range[1], size=cfg.ground_points)
        gz = cfg.z_range[0] + np.abs(rng.normal(0.0, cfg.noise_sigma, cfg.ground_points))
        chunks.append(np.column_stack([gx, gy, gz]))

    # vertical pole confusers: upright and elongated, pedestrian-like footprints
    for _ in range(cfg.poles_per_scene):
        x = rng.uniform(cfg.x_range[0] + 1.0, cfg.x_range[1] - 1.0)
        y = rng.uniform(cfg.y_range[0] + 1.0, cfg.y_range[1] - 1.0)
        if math.hypot(x, y) < cfg.min_range:
            continue
        height = rng.uniform(1.4, 2.4)
        radius = rng.uniform(0.06, 0.2)
        n_pole = _decayed_count(10 ** 9, math.hypot(x, y), cfg, rng)
        n_pole = max(int(0.4 * n_pole), 8)
        phi = rng.uniform(0.0, 2.0 * math.pi, size=n_pole)
        z = cfg.z_range[0] + rng.uniform(0.0, height, size=n_pole)
        pole = np.column_stack([x + radius * np.cos(phi), y + radius * np.sin(phi), z])
        chunks.append(pole + rng.normal(0.0, cfg.noise_sigma, size=pole.shape))

    cloud = np.vstack(chunks) if chunks else np.zeros((0, 3))
    return SceneSample(cloud=cloud, gt_boxes=boxes, gt_classes=classes,
                       seed=seed, dropped_gt=dropped)


def write_scene_bin(path, cloud: np.ndarray):
    """KITTI-style flat little-endian float32 (x, y, z) triplets."""
    np.ascontiguousarray(cloud, dtype="<f4").tofile(path)


def read_scene_bin(path) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size % 3 != 0:
        raise ValueError("scene file length is not a multiple of 3 floats")
    return data.reshape(-1, 3).astype(np.float64)
