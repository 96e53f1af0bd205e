"""Voxel fields (occupancy, free space, height prior) and their 3D integral accumulators."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .geometry import OrientedBox3D, PointCloud, Point3

DEFAULT_VOXEL = 0.2
MAX_VOXELS = 64_000_000
GRID_MAGIC = b"VXG1"

OCCUPANCY = "occupancy"
FREE_SPACE = "free_space"
HEIGHT_PRIOR = "height_prior"
KINDS = (OCCUPANCY, FREE_SPACE, HEIGHT_PRIOR)

# index rounding slack so that voxel centers landing on a box face by
# construction are not lost to float noise
_INDEX_EPS = 1e-9


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    voxel_size: float = DEFAULT_VOXEL
    dims: tuple = (1, 1, 1)
    max_voxels: int = MAX_VOXELS

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if not self.voxel_size > 0:
            raise GridError("voxel size must be positive")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise GridError(f"bad grid dims {self.dims}")
        if self.n_voxels > self.max_voxels:
            raise GridError(f"grid of {self.n_voxels} voxels exceeds the memory cap of {self.max_voxels}")

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def upper(self) -> tuple:
        return tuple(o + n * self.voxel_size for o, n in zip(self.origin, self.dims))

    @classmethod
    def from_bounds(cls, lo, hi, voxel_size: float = DEFAULT_VOXEL, max_voxels: int = MAX_VOXELS) -> "GridSpec":
        dims = tuple(max(1, int(math.ceil((h - l) / voxel_size - 1e-9))) for l, h in zip(lo, hi))
        return cls(tuple(lo), voxel_size, dims, max_voxels)

    @classmethod
    def kitti_default(cls, voxel_size: float = DEFAULT_VOXEL) -> "GridSpec":
        return cls.from_bounds((-35.0, -2.5, 0.0), (35.0, 1.5, 70.0), voxel_size)

    def to_voxel(self, pts: np.ndarray) -> np.ndarray:
        """Continuous voxel coordinates (voxel (i, j, k) spans [i, i+1) on each axis)."""
        return (np.asarray(pts, dtype=np.float64) - np.asarray(self.origin)) / self.voxel_size

    def voxel_centers(self) -> tuple:
        """Per-axis center coordinates (xs, ys, zs)."""
        return tuple(o + (np.arange(n) + 0.5) * self.voxel_size for o, n in zip(self.origin, self.dims))

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "voxel_size": self.voxel_size, "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        if "lo" in d:
            return cls.from_bounds(d["lo"], d["hi"], d.get("voxel_size", DEFAULT_VOXEL))
        return cls(tuple(d["origin"]), d.get("voxel_size", DEFAULT_VOXEL), tuple(d["dims"]))


@dataclass(frozen=True)
class VoxelGrid:
    spec: GridSpec
    values: np.ndarray
    kind: str
    dropped: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GridError(f"unknown grid kind {self.kind!r}")
        if tuple(self.values.shape) != self.spec.dims:
            raise GridError(f"values shape {self.values.shape} does not match dims {self.spec.dims}")


@dataclass(frozen=True)
class IntegralGrid:
    """Zero-padded prefix sums: ``S[i, j, k]`` is the sum over ``values[:i, :j, :k]``."""

    spec: GridSpec
    S: np.ndarray
    kind: str

    @property
    def total(self):
        return self.S[-1, -1, -1]


class BoxSum(NamedTuple):
    sum: float
    voxel_count: int
    conservative: bool


def voxelize(cloud: PointCloud, spec: GridSpec) -> VoxelGrid:
    occ = np.zeros(spec.dims, dtype=np.uint8)
    pts = cloud.points
    if pts.shape[0] == 0:
        return VoxelGrid(spec, occ, OCCUPANCY, 0)
    idx = np.floor(spec.to_voxel(pts)).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=1)
    idx = idx[inside]
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return VoxelGrid(spec, occ, OCCUPANCY, int((~inside).sum()))


def carve_free_space(occupancy: VoxelGrid, camera_origin) -> VoxelGrid:
    """Mark voxels crossed by camera rays before they reach an occupied voxel."""
    if occupancy.kind != OCCUPANCY:
        raise GridError("free space is carved from an occupancy grid")
    if isinstance(camera_origin, Point3):
        camera_origin = camera_origin.as_array()
    cam = occupancy.spec.to_voxel(np.asarray(camera_origin, dtype=np.float64).reshape(3))
    free = kernels.carve(occupancy.values, cam)
    return VoxelGrid(occupancy.spec, free, FREE_SPACE)


def voxel_heights(spec: GridSpec, plane) -> np.ndarray:
    """Signed height of every voxel center above ``plane`` (positive against gravity)."""
    xs, ys, zs = spec.voxel_centers()
    n = plane.normal
    return (n[0] * xs[:, None, None] + n[1] * ys[None, :, None] + n[2] * zs[None, None, :]) + plane.offset


def build_height_prior(occupancy: VoxelGrid, plane, mu: float, sigma: float) -> VoxelGrid:
    if not sigma > 0:
        raise GridError("height prior sigma must be positive")
    d = voxel_heights(occupancy.spec, plane)
    h = np.exp(-0.5 * ((d - mu) / sigma) ** 2)
    h = np.where(occupancy.values > 0, h, 0.0)
    return VoxelGrid(occupancy.spec, h, HEIGHT_PRIOR)


def build_integral(grid: VoxelGrid) -> IntegralGrid:
    dtype = np.float64 if grid.kind == HEIGHT_PRIOR else np.int64
    nx, ny, nz = grid.spec.dims
    S = np.zeros((nx + 1, ny + 1, nz + 1), dtype=dtype)
    np.cumsum(grid.values, axis=0, dtype=dtype, out=S[1:, 1:, 1:])
    np.cumsum(S[1:, 1:, 1:], axis=1, out=S[1:, 1:, 1:])
    np.cumsum(S[1:, 1:, 1:], axis=2, out=S[1:, 1:, 1:])
    return IntegralGrid(grid.spec, S, grid.kind)


# ---------------------------------------------------------------------------
# Box -> voxel index ranges


def extents_array(boxes: np.ndarray, margin: float = 0.0):
    """Camera-axis (lo, hi) extents of (N, 7) boxes and a flag for non-grid-aligned rows.

    Non-aligned rows use the axis-aligned bounds of their rotated footprint.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    az = boxes[:, 6]
    quarter = az / (0.5 * np.pi)
    aligned = np.abs(quarter - np.round(quarter)) < 1e-9
    c, s = np.abs(np.cos(az)), np.abs(np.sin(az))
    hx = 0.5 * (c * boxes[:, 3] + s * boxes[:, 5])
    hz = 0.5 * (s * boxes[:, 3] + c * boxes[:, 5])
    swap = (np.round(quarter).astype(np.int64) % 2) == 1
    hx = np.where(aligned, 0.5 * np.where(swap, boxes[:, 5], boxes[:, 3]), hx)
    hz = np.where(aligned, 0.5 * np.where(swap, boxes[:, 3], boxes[:, 5]), hz)
    half = np.stack([hx, 0.5 * boxes[:, 4], hz], axis=1) + margin
    lo = boxes[:, :3] - half
    hi = boxes[:, :3] + half
    return lo, hi, ~aligned


def axis_range(spec: GridSpec, axis: int, lo, hi) -> tuple:
    """Half-open voxel index range (i0, i1) along one axis of the centers lying in [lo, hi)."""
    o, h, n = spec.origin[axis], spec.voxel_size, spec.dims[axis]
    a = (np.asarray(lo, dtype=np.float64) - o) / h - 0.5 - _INDEX_EPS
    b = (np.asarray(hi, dtype=np.float64) - o) / h - 0.5 - _INDEX_EPS
    i0 = np.clip(np.ceil(a).astype(np.int64), 0, n)
    i1 = np.maximum(np.clip(np.ceil(b).astype(np.int64), 0, n), i0)
    return i0, i1


def index_ranges(spec: GridSpec, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Half-open voxel index ranges (i0, i1, j0, j1, k0, k1) of voxels whose centers lie in [lo, hi)."""
    lo = np.asarray(lo, dtype=np.float64).reshape(-1, 3)
    hi = np.asarray(hi, dtype=np.float64).reshape(-1, 3)
    cols = []
    for ax in range(3):
        cols += axis_range(spec, ax, lo[:, ax], hi[:, ax])
    return np.stack(cols, axis=1)


def box_ranges(spec: GridSpec, boxes: np.ndarray, margin: float = 0.0):
    lo, hi, conservative = extents_array(boxes, margin)
    return index_ranges(spec, lo, hi), conservative


def range_counts(ranges: np.ndarray) -> np.ndarray:
    r = np.asarray(ranges).reshape(-1, 6)
    return (r[:, 1] - r[:, 0]) * (r[:, 3] - r[:, 2]) * (r[:, 5] - r[:, 4])


def box_sum(ig: IntegralGrid, b: OrientedBox3D) -> BoxSum:
    r, cons = box_ranges(ig.spec, b.as_array()[None, :])
    count = int(range_counts(r)[0])
    if count == 0:
        return BoxSum(0.0, 0, bool(cons[0]))
    total = kernels.box_sums(ig.S, r)[0]
    return BoxSum(total.item(), count, bool(cons[0]))


def box_sums(ig: IntegralGrid, ranges: np.ndarray) -> np.ndarray:
    return kernels.box_sums(ig.S, ranges)


# ---------------------------------------------------------------------------
# Debug dump: 32-byte header then float32 LE values in (ix, iy, iz) C order


def dump_grid(grid: VoxelGrid, path) -> None:
    spec = grid.spec
    header = GRID_MAGIC + struct.pack("<3I", *spec.dims) + struct.pack("<f", spec.voxel_size) \
        + struct.pack("<3f", *spec.origin)
    assert len(header) == 32
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def load_grid(path, kind: str = OCCUPANCY) -> VoxelGrid:
    with open(path, "rb") as f:
        header = f.read(32)
        if len(header) != 32 or header[:4] != GRID_MAGIC:
            raise GridError(f"{path}: not a grid dump")
        dims = struct.unpack("<3I", header[4:16])
        (h,) = struct.unpack("<f", header[16:20])
        origin = struct.unpack("<3f", header[20:32])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != dims[0] * dims[1] * dims[2]:
        raise GridError(f"{path}: expected {dims[0] * dims[1] * dims[2]} values, found {data.size}")
    spec = GridSpec(origin, float(h), dims)
    return VoxelGrid(spec, data.reshape(dims).astype(np.float64), kind)
