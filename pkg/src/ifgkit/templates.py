"""Procedural per-class point-cloud templates and GT-box-driven adjustment.

Each class (car=1, pedestrian=2, cyclist=3) gets a canonical template: k
points sampled from a union of simple surface primitives in a canonical
frame (center at the origin, heading along +x), normalized so the bounding
extents match the class's canonical dimensions exactly. Adjustment to a GT
box scales per axis by the dimension ratios, rotates by the box yaw, and
translates to the box center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import Box3D

CAR, PEDESTRIAN, CYCLIST = 1, 2, 3
CLASS_NAMES = {CAR: "Car", PEDESTRIAN: "Pedestrian", CYCLIST: "Cyclist"}
CLASS_IDS = {v: k for k, v in CLASS_NAMES.items()}

# canonical (L', W', H') in meters; typical class means, normalized away on adjust
CANONICAL_DIMS = {
    CAR: (3.9, 1.6, 1.56),
    PEDESTRIAN: (0.8, 0.6, 1.73),
    CYCLIST: (1.76, 0.6, 1.73),
}


@dataclass(frozen=True)
class Template:
    class_id: int
    points: np.ndarray  # (k, 3) canonical frame
    canonical_dims: tuple[float, float, float]


# -- surface primitives ----------------------------------------------------
# Each primitive is (area, sampler(rng, n) -> (n, 3)) plus an inside() test
# used for density checks.


class _Primitive:
    def area(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def contains(self, pts: np.ndarray, slack: float = 1.05) -> np.ndarray:
        raise NotImplementedError


class _Slab(_Primitive):
    """Axis-aligned box surface."""

    def __init__(self, center, dims):
        self.center = np.asarray(center, dtype=float)
        self.dims = np.asarray(dims, dtype=float)

    def area(self):
        a, b, c = self.dims
        return 2.0 * (a * b + b * c + a * c)

    def sample(self, rng, n):
        a, b, c = self.dims
        face_areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
        faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        u = rng.uniform(-0.5, 0.5, size=(n, 2))
        pts = np.zeros((n, 3))
        for f in range(6):
            mask = faces == f
            axis = f // 2
            sign = 1.0 if f % 2 == 0 else -1.0
            other = [i for i in range(3) if i != axis]
            pts[mask, axis] = sign * 0.5 * self.dims[axis]
            pts[mask, other[0]] = u[mask, 0] * self.dims[other[0]]
            pts[mask, other[1]] = u[mask, 1] * self.dims[other[1]]
        return pts + self.center

    def contains(self, pts, slack=1.05):
        return np.all(np.abs(pts - self.center) <= 0.5 * slack * self.dims, axis=1)


class _Cylinder(_Primitive):
    """Closed cylinder with its axis along a coordinate axis."""

    def __init__(self, center, radius, length, axis):
        self.center = np.asarray(center, dtype=float)
        self.radius = radius
        self.length = length
        self.axis = axis

    def area(self):
        return 2.0 * math.pi * self.radius * self.length + 2.0 * math.pi * self.radius ** 2

    def sample(self, rng, n):
        lateral = 2.0 * math.pi * self.radius * self.length
        caps = 2.0 * math.pi * self.radius ** 2
        on_cap = rng.uniform(size=n) < caps / (lateral + caps)
        phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
        r = np.where(on_cap, self.radius * np.sqrt(rng.uniform(size=n)), self.radius)
        along = np.where(
            on_cap,
            0.5 * self.length * np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0),
            rng.uniform(-0.5, 0.5, size=n) * self.length,
        )
        pts = np.zeros((n, 3))
        others = [i for i in range(3) if i != self.axis]
        pts[:, self.axis] = along
        pts[:, others[0]] = r * np.cos(phi)
        pts[:, others[1]] = r * np.sin(phi)
        return pts + self.center

    def contains(self, pts, slack=1.05):
        d = pts - self.center
        others = [i for i in range(3) if i != self.axis]
        radial = np.hypot(d[:, others[0]], d[:, others[1]])
        return (radial <= slack * self.radius) & (
            np.abs(d[:, self.axis]) <= 0.5 * slack * self.length
        )


class _Ellipsoid(_Primitive):
    """Ellipsoid surface, sampled by area-weighted rejection."""

    def __init__(self, center, semi_axes):
        self.center = np.asarray(center, dtype=float)
        self.semi = np.asarray(semi_axes, dtype=float)

    def area(self):
        # Thomsen approximation, adequate for area weighting
        p = 1.6075
        a, b, c = self.semi
        return 4.0 * math.pi * (((a * b) ** p + (b * c) ** p + (a * c) ** p) / 3.0) ** (1.0 / p)

    def sample(self, rng, n):
        out = np.empty((0, 3))
        while len(out) < n:
            m = 4 * (n - len(out)) + 16
            u = rng.normal(size=(m, 3))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            pts = u * self.semi
            # local area element ~ |n| of the scaled normal
            w = np.linalg.norm(u / self.semi, axis=1) * np.prod(self.semi)
            accept = rng.uniform(size=m) * w.max() < w
            out = np.vstack([out, pts[accept]])
        return out[:n] + self.center

    def contains(self, pts, slack=1.05):
        d = (pts - self.center) / (slack * self.semi)
        return np.sum(d * d, axis=1) <= 1.0


class _Capsule(_Primitive):
    """Cylinder with hemispherical ends, axis along a coordinate axis."""

    def __init__(self, center, radius, length, axis):
        self.center = np.asarray(center, dtype=float)
        self.radius = radius
        self.length = length  # cylindrical section length (excludes end caps)
        self.axis = axis

    def area(self):
        return 2.0 * math.pi * self.radius * self.length + 4.0 * math.pi * self.radius ** 2

    def sample(self, rng, n):
        lateral = 2.0 * math.pi * self.radius * self.length
        sphere = 4.0 * math.pi * self.radius ** 2
        on_sphere = rng.uniform(size=n) < sphere / (lateral + sphere)
        pts = np.zeros((n, 3))
        others = [i for i in range(3) if i != self.axis]
        phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
        # lateral section
        along = rng.uniform(-0.5, 0.5, size=n) * self.length
        pts[:, self.axis] = along
        pts[:, others[0]] = self.radius * np.cos(phi)
        pts[:, others[1]] = self.radius * np.sin(phi)
        # hemispherical ends
        if np.any(on_sphere):
            k = int(on_sphere.sum())
            u = rng.normal(size=(k, 3))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            sp = self.radius * u
            sp[:, self.axis] += 0.5 * self.length * np.sign(sp[:, self.axis] + 1e-300)
            pts[on_sphere] = sp
        return pts + self.center

    def contains(self, pts, slack=1.05):
        d = pts - self.center
        a = d[:, self.axis]
        clamped = np.clip(a, -0.5 * self.length, 0.5 * self.length)
        d2 = d.copy()
        d2[:, self.axis] = a - clamped
        return np.linalg.norm(d2, axis=1) <= slack * self.radius


def _car_primitives() -> list[_Primitive]:
    body = _Slab(center=(0.0, 0.0, 0.25), dims=(3.9, 1.6, 1.0))
    cabin = _Slab(center=(-0.2, 0.0, 0.6), dims=(1.8, 1.4, 0.6))
    wheels = [
        _Cylinder(center=(x, y, -0.45), radius=0.33, length=0.22, axis=1)
        for x in (1.3, -1.3) for y in (0.7, -0.7)
    ]
    return [body, cabin, *wheels]


def _pedestrian_primitives() -> list[_Primitive]:
    head = _Ellipsoid(center=(0.0, 0.0, 0.72), semi_axes=(0.1, 0.09, 0.12))
    torso = _Capsule(center=(0.0, 0.0, 0.25), radius=0.15, length=0.5, axis=2)
    legs = [
        _Capsule(center=(0.02, y, -0.5), radius=0.07, length=0.65, axis=2)
        for y in (0.1, -0.1)
    ]
    arms = [
        _Capsule(center=(0.05, y, 0.2), radius=0.05, length=0.55, axis=2)
        for y in (0.24, -0.24)
    ]
    stride = _Capsule(center=(0.25, 0.05, -0.55), radius=0.06, length=0.55, axis=2)
    return [head, torso, *legs, *arms, stride]


def _cyclist_primitives() -> list[_Primitive]:
    wheels = [
        _Cylinder(center=(x, 0.0, -0.55), radius=0.33, length=0.06, axis=1)
        for x in (0.55, -0.55)
    ]
    frame = _Slab(center=(0.0, 0.0, -0.35), dims=(1.1, 0.05, 0.35))
    torso = _Capsule(center=(-0.15, 0.0, 0.25), radius=0.13, length=0.55, axis=2)
    head = _Ellipsoid(center=(-0.1, 0.0, 0.68), semi_axes=(0.1, 0.09, 0.11))
    bars = _Cylinder(center=(0.35, 0.0, 0.05), radius=0.03, length=0.45, axis=1)
    return [*wheels, frame, torso, head, bars]


_BUILDERS = {
    CAR: _car_primitives,
    PEDESTRIAN: _pedestrian_primitives,
    CYCLIST: _cyclist_primitives,
}


def class_primitives(class_id: int) -> list[_Primitive]:
    if class_id not in _BUILDERS:
        raise ValueError(f"unknown class id {class_id}")
    return _BUILDERS[class_id]()


def _stratified_counts(areas: np.ndarray, k: int) -> np.ndarray:
    """Allocate k samples by area share; largest-remainder rounding keeps each
    primitive within one point of its exact share."""
    shares = areas / areas.sum() * k
    counts = np.floor(shares).astype(int)
    remainder = k - counts.sum()
    order = np.argsort(-(shares - counts))
    counts[order[:remainder]] += 1
    return counts


def _normalize_extents(points: np.ndarray, dims) -> np.ndarray:
    lo, hi = points.min(axis=0), points.max(axis=0)
    scale = np.asarray(dims, dtype=float) / (hi - lo)
    return (points - 0.5 * (lo + hi)) * scale


def generate_template(class_id: int, k: int = 1024, seed: int = 0) -> Template:
    """Sample k surface points from the class's primitive union, seeded."""
    if k < 64:
        raise ValueError("k must be >= 64")
    prims = class_primitives(class_id)
    rng = np.random.default_rng(seed=(seed, class_id))
    areas = np.array([p.area() for p in prims])
    counts = _stratified_counts(areas, k)
    chunks = [p.sample(rng, n) for p, n in zip(prims, counts) if n > 0]
    dims = CANONICAL_DIMS[class_id]
    points = _normalize_extents(np.vstack(chunks), dims)
    return Template(class_id=class_id, points=points, canonical_dims=dims)


def adjust_template(template: Template, gt: Box3D) -> np.ndarray:
    """Scale per axis to the GT dims, rotate by its yaw, translate to its center."""
    lw, ww, hw = template.canonical_dims
    scaled = template.points * np.array([gt.l / lw, gt.w / ww, gt.h / hw])
    c, s = math.cos(gt.theta), math.sin(gt.theta)
    out = scaled.copy()
    out[:, 0] = c * scaled[:, 0] - s * scaled[:, 1]
    out[:, 1] = s * scaled[:, 0] + c * scaled[:, 1]
    return out + np.array([gt.x, gt.y, gt.z])


# -- ASCII PLY I/O ---------------------------------------------------------


def write_template(path, template: Template):
    with open(path, "w") as f:
        d = template.canonical_dims
        f.write("ply\n")
        f.write("format ascii 1.0\n")
        f.write(f"comment class {template.class_id}\n")
        f.write(f"comment dims {d[0]:.6f} {d[1]:.6f} {d[2]:.6f}\n")
        f.write(f"element vertex {len(template.points)}\n")
        f.write("property float x\n")
        f.write("property float y\n")
        f.write("property float z\n")
        f.write("end_header\n")
        for p in template.points.astype(np.float32):
            f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


class PlyParseError(ValueError):
    pass


def read_template(path) -> Template:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("line 1: expected 'ply'")
    class_id = None
    dims = None
    n_vertices = None
    body_start = None
    for i, ln in enumerate(lines[1:], start=2):
        tokens = ln.split()
        if not tokens:
            continue
        if tokens[0] == "comment" and len(tokens) >= 3 and tokens[1] == "class":
            class_id = int(tokens[2])
        elif tokens[0] == "comment" and len(tokens) >= 5 and tokens[1] == "dims":
            dims = tuple(float(t) for t in tokens[2:5])
        elif tokens[0] == "element":
            if tokens[1] != "vertex" or len(tokens) != 3:
                raise PlyParseError(f"line {i}: unsupported element")
            n_vertices = int(tokens[2])
        elif tokens[0] == "end_header":
            body_start = i
            break
    if body_start is None:
        raise PlyParseError("missing end_header")
    if n_vertices is None:
        raise PlyParseError("missing 'element vertex' declaration")
    if class_id is None or dims is None:
        raise PlyParseError("missing class/dims comment lines")
    body = lines[body_start:]
    if len([ln for ln in body if ln.strip()]) < n_vertices:
        raise PlyParseError(
            f"line {body_start + len(body)}: expected {n_vertices} vertices, "
            f"got {len(body)}"
        )
    points = np.empty((n_vertices, 3))
    for j in range(n_vertices):
        tokens = body[j].split()
        if len(tokens) != 3:
            raise PlyParseError(f"line {body_start + j + 1}: expected 3 coordinates")
        try:
            points[j] = [float(t) for t in tokens]
        except ValueError as e:
            raise PlyParseError(f"line {body_start + j + 1}: {e}") from None
    return Template(class_id=class_id, points=points, canonical_dims=dims)
