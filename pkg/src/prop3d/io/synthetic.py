"""Seeded synthetic street scenes: a road carpet, cuboid objects seen from one viewpoint, and clutter.

Only object faces turned towards the camera are sampled, and points hidden
behind another object are dropped, so free-space carving sees what a single
depth sensor would see.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..geometry import CameraCalib, OrientedBox3D, PointCloud, project_boxes
from ..ground import GroundPlane

OWNER_GROUND, OWNER_CLUTTER, OWNER_WALL = -1, -2, -3
MAX_ATTEMPTS = 100
CAR_SIZE = (3.9, 1.56, 1.6)


class SyntheticError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectClassSpec:
    name: str = "car"
    size_mean: tuple = CAR_SIZE
    size_std: tuple = (0.15, 0.05, 0.05)
    weight: float = 1.0


@dataclass(frozen=True)
class SyntheticSceneSpec:
    seed: int = 0
    camera_height: float = 1.65
    pitch_deg: float = 0.0
    n_objects: tuple = (1, 5)
    classes: tuple = (ObjectClassSpec(),)
    distance: tuple = (5.0, 50.0)
    yaw_mode: str = "axis"  # "axis": {0, 90} degrees; "uniform": [0, 360)
    object_density: float = 100.0  # points per m^2 of visible surface
    ground_density: float = 4.0
    ground_extent: tuple = (35.0, 2.0, 70.0)  # |x| max, z min, z max
    noise: float = 0.02
    clutter_fraction: float = 0.0
    walls: bool = False
    wall_density: float = 20.0
    overlap_margin: float = 0.5  # minimum BEV gap between objects, meters
    occlusion: bool = True
    max_occluded: float = 0.5  # layouts hiding more of any object than this are redrawn
    fov_fraction: float = 0.8

    def __post_init__(self):
        if min(self.object_density, self.ground_density, self.wall_density, self.noise) < 0:
            raise SyntheticError("densities and noise must be non-negative")
        if not 0 <= self.clutter_fraction:
            raise SyntheticError("clutter fraction must be non-negative")
        lo, hi = self.n_objects
        if lo < 0 or hi < lo:
            raise SyntheticError(f"bad object count range {self.n_objects}")
        if self.yaw_mode not in ("axis", "uniform"):
            raise SyntheticError(f"unknown yaw mode {self.yaw_mode!r}")
        if not self.classes and hi > 0:
            raise SyntheticError("objects requested but no object classes given")

    @classmethod
    def kitti_scale(cls, seed: int = 0, **kw) -> "SyntheticSceneSpec":
        """Street canyon with facades on both sides and some clutter."""
        base = dict(seed=seed, walls=True, clutter_fraction=0.02, ground_density=8.0)
        base.update(kw)
        return cls(**base)


@dataclass
class SyntheticScene:
    cloud: PointCloud
    plane: GroundPlane
    boxes: list
    calib: CameraCalib
    class_names: list = field(default_factory=list)
    owner: Optional[np.ndarray] = None  # per point: object index, or OWNER_* codes
    occluded_fraction: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.cloud, self.plane, self.boxes))

    def occlusion_levels(self) -> list:
        return [0 if f < 0.2 else 1 if f < 0.5 else 2 for f in self.occluded_fraction]

    def rects(self) -> np.ndarray:
        if not self.boxes:
            return np.zeros((0, 4))
        return project_boxes(np.array([b.as_array() for b in self.boxes]), self.calib)

    def truncations(self) -> list:
        """Share of each box's unclipped image extent that falls outside the image."""
        if not self.boxes:
            return []
        arr = np.array([b.as_array() for b in self.boxes])
        full = project_boxes(arr, self.calib, clip=False)
        clipped = project_boxes(arr, self.calib)
        out = []
        for f, c in zip(full, clipped):
            fa = max(f[2] - f[0], 0) * max(f[3] - f[1], 0)
            ca = max(c[2] - c[0], 0) * max(c[3] - c[1], 0) if np.all(np.isfinite(c)) else 0.0
            out.append(0.0 if fa <= 0 else float(min(max(1 - ca / fa, 0.0), 1.0)))
        return out


def scene_plane(spec: SyntheticSceneSpec) -> GroundPlane:
    p = math.radians(spec.pitch_deg)
    return GroundPlane((0.0, -math.cos(p), -math.sin(p)), spec.camera_height)


def _rotation(az: float) -> np.ndarray:
    """Local-to-camera rotation about Y."""
    c, s = math.cos(az), math.sin(az)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _truncated_noise(rng, n: int, sigma: float) -> np.ndarray:
    if sigma == 0 or n == 0:
        return np.zeros((n, 3))
    e = rng.normal(0.0, sigma, (n, 3))
    norm = np.linalg.norm(e, axis=1)
    cap = 3.0 * sigma
    scale = np.where(norm > cap, cap / np.maximum(norm, 1e-300), 1.0)
    return e * scale[:, None]


def visible_face_points(box: OrientedBox3D, density: float, rng, camera=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Uniform samples over the faces of ``box`` whose outward normal points towards the camera."""
    R = _rotation(box.azimuth)
    c = np.asarray(box.center)
    half = 0.5 * np.asarray(box.size)
    cam = np.asarray(camera, dtype=np.float64)
    out = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            n_local = np.zeros(3)
            n_local[axis] = sign
            face_c = c + R @ (n_local * half)
            if np.dot(face_c - cam, R @ n_local) >= 0:
                continue
            u, v = [a for a in range(3) if a != axis]
            area = 4.0 * half[u] * half[v]
            k = rng.poisson(density * area)
            local = np.empty((k, 3))
            local[:, axis] = sign * half[axis]
            local[:, u] = rng.uniform(-half[u], half[u], k)
            local[:, v] = rng.uniform(-half[v], half[v], k)
            out.append(local @ R.T + c)
    return np.vstack(out) if out else np.zeros((0, 3))


def ray_hits_box(points: np.ndarray, box: OrientedBox3D, camera=(0.0, 0.0, 0.0), t_max: float = 1.0 - 1e-6):
    """True where the segment camera -> point passes through ``box`` before reaching the point."""
    R = _rotation(box.azimuth)
    o = (np.asarray(camera, dtype=np.float64) - np.asarray(box.center)) @ R
    d = (np.asarray(points, dtype=np.float64) - np.asarray(camera)) @ R
    half = 0.5 * np.asarray(box.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tlo = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    thi = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
    # a zero direction component: inside the slab for all t or never
    flat = d == 0
    outside = flat & (np.abs(o) > half)
    tlo = np.where(flat, -np.inf, tlo)
    thi = np.where(flat, np.inf, thi)
    enter = tlo.max(axis=1)
    leave = thi.min(axis=1)
    return (enter <= leave) & (leave > 0) & (enter < t_max) & ~outside.any(axis=1)


def _bev_overlap(a: OrientedBox3D, b: OrientedBox3D, margin: float) -> bool:
    """Conservative test on bounding circles of the footprints."""
    ra = 0.5 * math.hypot(a.size[0], a.size[2])
    rb = 0.5 * math.hypot(b.size[0], b.size[2])
    d = math.hypot(a.center[0] - b.center[0], a.center[2] - b.center[2])
    return d < ra + rb + margin


def _half_fov(calib: CameraCalib) -> float:
    fx, cx = calib.P[0, 0], calib.P[0, 2]
    return math.atan(min(cx, calib.width - cx) / fx)


def _place_objects(spec, rng, plane, calib, walls):
    n = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))
    if n == 0:
        return [], []
    weights = np.array([c.weight for c in spec.classes], dtype=np.float64)
    weights = weights / weights.sum()
    half = spec.fov_fraction * _half_fov(calib)
    boxes, names = [], []
    for _ in range(n):
        cls = spec.classes[int(rng.choice(len(spec.classes), p=weights))]
        for _attempt in range(MAX_ATTEMPTS):
            size = np.maximum(rng.normal(cls.size_mean, cls.size_std), 0.2)
            r = rng.uniform(*spec.distance)
            bearing = rng.uniform(-half, half)
            x, z = r * math.sin(bearing), r * math.cos(bearing)
            az = (0.5 * math.pi * int(rng.integers(0, 2)) if spec.yaw_mode == "axis"
                  else rng.uniform(0.0, 2.0 * math.pi))
            y = float(plane.y_at(x, z)) - 0.5 * size[1]
            box = OrientedBox3D((x, y, z), tuple(size), az)
            reach = abs(x) + 0.5 * math.hypot(size[0], size[2]) + spec.overlap_margin
            if walls and reach > min(abs(w) for w in walls):
                continue
            if any(_bev_overlap(box, b, spec.overlap_margin) for b in boxes):
                continue
            boxes.append(box)
            names.append(cls.name)
            break
        else:
            raise SyntheticError(f"could not place object {len(boxes) + 1} without overlap "
                                 f"after {MAX_ATTEMPTS} attempts")
    return boxes, names


def _ground_points(spec, rng, plane, calib):
    xmax, zmin, zmax = spec.ground_extent
    k = rng.poisson(spec.ground_density * 2 * xmax * (zmax - zmin))
    x = rng.uniform(-xmax, xmax, k)
    z = rng.uniform(zmin, zmax, k)
    keep = np.abs(x) <= z * math.tan(_half_fov(calib))
    x, z = x[keep], z[keep]
    return np.stack([x, plane.y_at(x, z), z], axis=1)


def _wall_points(spec, rng, plane, walls):
    _, zmin, zmax = spec.ground_extent
    out = []
    for wx in walls:
        height = rng.uniform(4.0, 6.0)
        k = rng.poisson(spec.wall_density * height * (zmax - zmin))
        z = rng.uniform(zmin, zmax, k)
        above = rng.uniform(0.0, height, k)
        y = plane.y_at(np.full(k, wx), z) - above
        out.append(np.stack([np.full(k, wx), y, z], axis=1))
    return np.vstack(out) if out else np.zeros((0, 3))


def _sample_points(spec, rng, plane, calib, walls, boxes):
    chunks, owners = [], []
    for i, b in enumerate(boxes):
        p = visible_face_points(b, spec.object_density, rng)
        chunks.append(p)
        owners.append(np.full(len(p), i))
    g = _ground_points(spec, rng, plane, calib)
    chunks.append(g)
    owners.append(np.full(len(g), OWNER_GROUND))
    w = _wall_points(spec, rng, plane, walls)
    chunks.append(w)
    owners.append(np.full(len(w), OWNER_WALL))
    pts = np.vstack(chunks)
    owner = np.concatenate(owners).astype(np.int64)

    occluded_fraction = [0.0] * len(boxes)
    if spec.occlusion and boxes:
        hidden = np.zeros(len(pts), dtype=bool)
        for i, b in enumerate(boxes):
            hidden |= ray_hits_box(pts, b) & (owner != i)
        for i in range(len(boxes)):
            mine = owner == i
            occluded_fraction[i] = float(hidden[mine].mean()) if mine.any() else 1.0
        pts, owner = pts[~hidden], owner[~hidden]
    return pts, owner, occluded_fraction


def generate_synthetic_scene(spec: SyntheticSceneSpec, calib: Optional[CameraCalib] = None) -> SyntheticScene:
    """Deterministic in ``spec`` (including its seed)."""
    rng = np.random.default_rng(spec.seed)
    calib = calib or CameraCalib.kitti_default()
    plane = scene_plane(spec)
    walls = []
    if spec.walls:
        walls = [-float(rng.uniform(9.0, 14.0)), float(rng.uniform(9.0, 14.0))]
    for _attempt in range(MAX_ATTEMPTS):
        boxes, names = _place_objects(spec, rng, plane, calib, walls)
        pts, owner, occluded_fraction = _sample_points(spec, rng, plane, calib, walls, boxes)
        if not occluded_fraction or max(occluded_fraction) <= spec.max_occluded:
            break
    else:
        raise SyntheticError(f"no layout with every object at most {spec.max_occluded:.0%} hidden "
                             f"after {MAX_ATTEMPTS} attempts")

    n_clutter = int(round(spec.clutter_fraction * len(pts)))
    if n_clutter:
        xmax, zmin, zmax = spec.ground_extent
        z = rng.uniform(zmin, zmax, n_clutter)
        x = rng.uniform(-1.0, 1.0, n_clutter) * np.minimum(z * math.tan(_half_fov(calib)), xmax)
        y = plane.y_at(x, z) - rng.uniform(-0.5, 2.5, n_clutter)
        pts = np.vstack([pts, np.stack([x, y, z], axis=1)])
        owner = np.concatenate([owner, np.full(n_clutter, OWNER_CLUTTER)])

    pts = pts + _truncated_noise(rng, len(pts), spec.noise)
    return SyntheticScene(PointCloud(pts), plane, boxes, calib, names, owner, occluded_fraction)
