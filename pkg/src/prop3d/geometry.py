"""Box geometry in the camera frame.

Frame: X right, Y down (gravity), Z forward. Boxes rotate only about Y; the
azimuth maps local box axes to camera axes with the usual KITTI rotation

    x_cam =  cos(a) * x_local + sin(a) * z_local
    z_cam = -sin(a) * x_local + cos(a) * z_local
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

TWO_PI = 2.0 * math.pi
AREA_EPS = 1e-9
NEAR_PLANE = 1e-3


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise GeometryError(f"non-finite point {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class PointCloud:
    """Ordered (N, 3) array of camera-frame points."""

    points: np.ndarray
    frame: str = "camera"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        for p in self.points:
            yield Point3(*p)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))


def normalize_azimuth(a: float) -> float:
    a = math.fmod(a, TWO_PI)
    if a < 0:
        a += TWO_PI
    if a >= TWO_PI:
        a = 0.0
    return a


@dataclass(frozen=True)
class OrientedBox3D:
    center: tuple
    size: tuple
    azimuth: float = 0.0
    class_id: Optional[int] = None
    template_id: Optional[int] = None

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        if len(c) != 3 or len(s) != 3:
            raise GeometryError("center and size need three components")
        if not all(math.isfinite(v) for v in c + s + (float(self.azimuth),)):
            raise GeometryError("box parameters must be finite")
        if min(s) <= 0:
            raise GeometryError(f"box size must be positive, got {s}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "azimuth", normalize_azimuth(float(self.azimuth)))

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    @property
    def y_range(self) -> tuple:
        return (self.center[1] - 0.5 * self.size[1], self.center[1] + 0.5 * self.size[1])

    def as_array(self) -> np.ndarray:
        return np.array(self.center + self.size + (self.azimuth,), dtype=np.float64)

    @classmethod
    def from_array(cls, row, class_id=None, template_id=None) -> "OrientedBox3D":
        row = [float(v) for v in row]
        return cls(tuple(row[0:3]), tuple(row[3:6]), row[6], class_id, template_id)

    def with_center(self, center) -> "OrientedBox3D":
        return replace(self, center=tuple(center))

    def footprint(self) -> np.ndarray:
        """Counter-clockwise (x, z) footprint corners, shape (4, 2)."""
        return _footprint(self.center[0], self.center[2], self.size[0], self.size[2], self.azimuth)

    def corners(self) -> np.ndarray:
        """The 8 corners, shape (8, 3): bottom face (larger y) first."""
        fp = self.footprint()
        y0, y1 = self.y_range
        out = np.empty((8, 3))
        out[:4, 0] = fp[:, 0]
        out[:4, 2] = fp[:, 1]
        out[:4, 1] = y1
        out[4:, 0] = fp[:, 0]
        out[4:, 2] = fp[:, 1]
        out[4:, 1] = y0
        return out


def boxes_to_array(boxes: Iterable[OrientedBox3D]) -> np.ndarray:
    rows = [b.as_array() for b in boxes]
    if not rows:
        return np.zeros((0, 7))
    return np.vstack(rows)


def _footprint(cx, cz, sx, sz, az) -> np.ndarray:
    c, s = math.cos(az), math.sin(az)
    local = np.array([[0.5 * sx, 0.5 * sz], [-0.5 * sx, 0.5 * sz],
                      [-0.5 * sx, -0.5 * sz], [0.5 * sx, -0.5 * sz]])
    x = cx + c * local[:, 0] + s * local[:, 1]
    z = cz - s * local[:, 0] + c * local[:, 1]
    return np.stack([x, z], axis=1)


def is_axis_aligned(azimuth: float, tol: float = 1e-12) -> bool:
    r = math.fmod(azimuth, 0.5 * math.pi)
    return r < tol or 0.5 * math.pi - r < tol


def aligned_extent(size, azimuth: float) -> tuple:
    """Camera-frame (x, z) extents of a footprint rotated by a multiple of 90 degrees."""
    quarter = int(round(azimuth / (0.5 * math.pi))) % 2
    return (size[2], size[0]) if quarter else (size[0], size[2])


# ---------------------------------------------------------------------------
# Polygon clipping


def _polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    a = 0.0
    n = len(poly)
    for i in range(n):
        x1, z1 = poly[i]
        x2, z2 = poly[(i + 1) % n]
        a += x1 * z2 - x2 * z1
    return 0.5 * a


def clip_convex(subject, clip) -> list:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, az = clip[i]
        bx, bz = clip[(i + 1) % n]
        ex, ez = bx - ax, bz - az
        inp = output
        output = []
        m = len(inp)
        for j in range(m):
            px, pz = inp[j]
            qx, qz = inp[(j + 1) % m]
            sp = ex * (pz - az) - ez * (px - ax)
            sq = ex * (qz - az) - ez * (qx - ax)
            if sp >= 0:
                output.append((px, pz))
                if sq < 0:
                    t = sp / (sp - sq)
                    output.append((px + t * (qx - px), pz + t * (qz - pz)))
            elif sq >= 0:
                t = sp / (sp - sq)
                output.append((px + t * (qx - px), pz + t * (qz - pz)))
    return output


def footprint_intersection_area(a: OrientedBox3D, b: OrientedBox3D) -> float:
    if is_axis_aligned(a.azimuth) and is_axis_aligned(b.azimuth):
        ax, az = aligned_extent(a.size, a.azimuth)
        bx, bz = aligned_extent(b.size, b.azimuth)
        ox = _overlap(a.center[0] - 0.5 * ax, a.center[0] + 0.5 * ax,
                      b.center[0] - 0.5 * bx, b.center[0] + 0.5 * bx)
        oz = _overlap(a.center[2] - 0.5 * az, a.center[2] + 0.5 * az,
                      b.center[2] - 0.5 * bz, b.center[2] + 0.5 * bz)
        return ox * oz
    poly = clip_convex(a.footprint(), b.footprint())
    area = _polygon_area(poly)
    return area if area > AREA_EPS else 0.0


def _overlap(a0, a1, b0, b1) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def iou_3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Exact IoU of two yaw-rotated boxes."""
    dy = _overlap(*a.y_range, *b.y_range)
    if dy <= 0.0:
        return 0.0
    inter = footprint_intersection_area(a, b) * dy
    if inter <= 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    return min(1.0, max(0.0, inter / union))


def iou_3d_many(box: OrientedBox3D, others: np.ndarray) -> np.ndarray:
    """IoU of ``box`` against rows (cx, cy, cz, sx, sy, sz, az) of ``others``.

    Axis-aligned pairs take a vectorized closed form; the rest are clipped one by one.
    """
    others = np.asarray(others, dtype=np.float64).reshape(-1, 7)
    n = others.shape[0]
    out = np.zeros(n)
    if n == 0:
        return out
    y0, y1 = box.y_range
    dy = np.clip(np.minimum(y1, others[:, 1] + 0.5 * others[:, 4])
                 - np.maximum(y0, others[:, 1] - 0.5 * others[:, 4]), 0.0, None)
    quarter = others[:, 6] / (0.5 * np.pi)
    aligned = np.abs(quarter - np.round(quarter)) < 1e-12
    if is_axis_aligned(box.azimuth):
        bx, bz = aligned_extent(box.size, box.azimuth)
        swap = (np.round(quarter).astype(np.int64) % 2) == 1
        ox_ext = np.where(swap, others[:, 5], others[:, 3])
        oz_ext = np.where(swap, others[:, 3], others[:, 5])
        ix = np.clip(np.minimum(box.center[0] + 0.5 * bx, others[:, 0] + 0.5 * ox_ext)
                     - np.maximum(box.center[0] - 0.5 * bx, others[:, 0] - 0.5 * ox_ext), 0.0, None)
        iz = np.clip(np.minimum(box.center[2] + 0.5 * bz, others[:, 2] + 0.5 * oz_ext)
                     - np.maximum(box.center[2] - 0.5 * bz, others[:, 2] - 0.5 * oz_ext), 0.0, None)
        inter = ix * iz * dy
        vol = others[:, 3] * others[:, 4] * others[:, 5]
        with np.errstate(invalid="ignore", divide="ignore"):
            fast = np.where(inter > 0, inter / (box.volume + vol - inter), 0.0)
        out[aligned] = np.clip(fast[aligned], 0.0, 1.0)
        slow = np.flatnonzero(~aligned & (dy > 0))
    else:
        slow = np.flatnonzero(dy > 0)
    for i in slow:
        out[i] = iou_3d(box, OrientedBox3D.from_array(others[i]))
    return out


# ---------------------------------------------------------------------------
# 2D rectangles


@dataclass(frozen=True)
class Rect2D:
    x1: float
    y1: float
    x2: float
    y2: float
    frame: str = "image"

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise GeometryError(f"rect max below min: {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def is_empty(self) -> bool:
        return self.area <= 0.0

    def as_tuple(self) -> tuple:
        return (self.x1, self.y1, self.x2, self.y2)


def iou_2d(a: Rect2D, b: Rect2D) -> float:
    if a.frame != b.frame:
        raise GeometryError(f"cannot compare rects in frames {a.frame!r} and {b.frame!r}")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def iou_2d_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) rect arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


# ---------------------------------------------------------------------------
# Camera


@dataclass(frozen=True)
class CameraCalib:
    P: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64).reshape(3, 4)
        if not np.all(np.isfinite(P)):
            raise GeometryError("projection matrix must be finite")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image size must be positive")
        object.__setattr__(self, "P", P)

    @property
    def focal(self) -> float:
        return float(self.P[0, 0])

    @property
    def principal_point(self) -> tuple:
        return float(self.P[0, 2]), float(self.P[1, 2])

    @property
    def horizon_row(self) -> float:
        """Image row of the vanishing point of the viewing direction."""
        return float(self.P[1, 2] / self.P[2, 2])

    @classmethod
    def kitti_default(cls) -> "CameraCalib":
        P = np.array([[721.5377, 0.0, 609.5593, 44.85728],
                      [0.0, 721.5377, 172.854, 0.2163791],
                      [0.0, 0.0, 1.0, 0.002745884]])
        return cls(P, 1242, 375)

    def project(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        h = pts @ self.P[:, :3].T + self.P[:, 3]
        return h[:, :2] / h[:, 2:3]


# edges of the box corner layout from OrientedBox3D.corners
_EDGES = np.array([[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4],
                   [0, 4], [1, 5], [2, 6], [3, 7]])


def box_corners_array(boxes: np.ndarray) -> np.ndarray:
    """Corners for (N, 7) box rows, shape (N, 8, 3), same layout as ``OrientedBox3D.corners``."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    c, s = np.cos(boxes[:, 6]), np.sin(boxes[:, 6])
    lx = np.array([0.5, -0.5, -0.5, 0.5])[None, :] * boxes[:, 3:4]
    lz = np.array([0.5, 0.5, -0.5, -0.5])[None, :] * boxes[:, 5:6]
    x = boxes[:, 0:1] + c[:, None] * lx + s[:, None] * lz
    z = boxes[:, 2:3] - s[:, None] * lx + c[:, None] * lz
    out = np.empty((boxes.shape[0], 8, 3))
    out[:, :4, 0] = x
    out[:, 4:, 0] = x
    out[:, :4, 2] = z
    out[:, 4:, 2] = z
    out[:, :4, 1] = (boxes[:, 1] + 0.5 * boxes[:, 4])[:, None]
    out[:, 4:, 1] = (boxes[:, 1] - 0.5 * boxes[:, 4])[:, None]
    return out


def _project_points(pts: np.ndarray, P: np.ndarray) -> np.ndarray:
    """(N, M, 3) camera points -> (N, M, 2) pixels."""
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    w = P[2, 0] * x + P[2, 1] * y + P[2, 2] * z + P[2, 3]
    with np.errstate(invalid="ignore", divide="ignore"):
        u = (P[0, 0] * x + P[0, 1] * y + P[0, 2] * z + P[0, 3]) / w
        v = (P[1, 0] * x + P[1, 1] * y + P[1, 2] * z + P[1, 3]) / w
    return np.stack([u, v], axis=-1)


def _footprint_corners(boxes: np.ndarray) -> tuple:
    """x and z of the four footprint corners, each (N, 4), in ``box_corners_array`` order."""
    c, s = np.cos(boxes[:, 6]), np.sin(boxes[:, 6])
    hx, hz = 0.5 * boxes[:, 3], 0.5 * boxes[:, 5]
    xs, zs = [], []
    for ex, ez in ((1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)):
        lx, lz = ex * hx, ez * hz
        xs.append(boxes[:, 0] + c * lx + s * lz)
        zs.append(boxes[:, 2] - s * lx + c * lz)
    return xs, zs


def _front_bounds(boxes: np.ndarray, xs: list, zs: list, P: np.ndarray) -> np.ndarray:
    """Pixel bounds of boxes whose corners all lie in front of the camera."""
    ys = (boxes[:, 1] + 0.5 * boxes[:, 4], boxes[:, 1] - 0.5 * boxes[:, 4])
    u_lo = v_lo = u_hi = v_hi = None
    for x, z in zip(xs, zs):
        for y in ys:
            w = P[2, 0] * x + P[2, 1] * y + P[2, 2] * z + P[2, 3]
            u = (P[0, 0] * x + P[0, 1] * y + P[0, 2] * z + P[0, 3]) / w
            v = (P[1, 0] * x + P[1, 1] * y + P[1, 2] * z + P[1, 3]) / w
            if u_lo is None:
                u_lo, u_hi, v_lo, v_hi = u, u.copy(), v, v.copy()
            else:
                np.minimum(u_lo, u, out=u_lo)
                np.maximum(u_hi, u, out=u_hi)
                np.minimum(v_lo, v, out=v_lo)
                np.maximum(v_hi, v, out=v_hi)
    return np.stack([u_lo, v_lo, u_hi, v_hi], axis=1)


def project_boxes(boxes: np.ndarray, calib: CameraCalib, clip: bool = True) -> np.ndarray:
    """Image rects (x1, y1, x2, y2) of (N, 7) boxes.

    Corners behind the camera are replaced by the box edges' crossings of a near
    plane. Rows with no visible geometry come back as NaN.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    n = boxes.shape[0]
    if n == 0:
        return np.zeros((0, 4))
    P = calib.P
    xs, zs = _footprint_corners(boxes)
    whole = np.minimum(np.minimum(zs[0], zs[1]), np.minimum(zs[2], zs[3])) > NEAR_PLANE
    rects = np.empty((n, 4))
    if whole.all():
        rects[:] = _front_bounds(boxes, xs, zs, P)
    elif whole.any():
        rects[whole] = _front_bounds(boxes[whole], [x[whole] for x in xs], [z[whole] for z in zs], P)
    if not whole.all():
        cut = ~whole
        c = box_corners_array(boxes[cut])
        f = c[:, :, 2] > NEAR_PLANE
        pts = np.where(f[:, :, None], c, np.nan)
        a = c[:, _EDGES[:, 0]]
        b = c[:, _EDGES[:, 1]]
        za, zb = a[:, :, 2], b[:, :, 2]
        cross = (za > NEAR_PLANE) != (zb > NEAR_PLANE)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = (NEAR_PLANE - za) / (zb - za)
            xing = a + t[:, :, None] * (b - a)
        xing[:, :, 2] = NEAR_PLANE
        xing = np.where(cross[:, :, None], xing, np.nan)
        uv = _project_points(np.concatenate([pts, xing], axis=1), P)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rects[cut, :2] = np.nanmin(uv, axis=1)
            rects[cut, 2:] = np.nanmax(uv, axis=1)
    if clip:
        rects[:, [0, 2]] = np.clip(rects[:, [0, 2]], 0.0, calib.width)
        rects[:, [1, 3]] = np.clip(rects[:, [1, 3]], 0.0, calib.height)
    return rects


def project_box(b: OrientedBox3D, calib: CameraCalib) -> Rect2D:
    if not np.any(b.corners()[:, 2] > NEAR_PLANE):
        raise GeometryError("box is entirely behind the camera")
    r = project_boxes(b.as_array()[None, :], calib)[0]
    return Rect2D(r[0], r[1], r[2], r[3], "image")


def bev_rects(boxes: np.ndarray) -> np.ndarray:
    """Axis-aligned (x1, z1, x2, z2) bounds of the rotated footprints of (N, 7) boxes."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    c, s = np.abs(np.cos(boxes[:, 6])), np.abs(np.sin(boxes[:, 6]))
    hx = 0.5 * (c * boxes[:, 3] + s * boxes[:, 5])
    hz = 0.5 * (s * boxes[:, 3] + c * boxes[:, 5])
    return np.stack([boxes[:, 0] - hx, boxes[:, 2] - hz, boxes[:, 0] + hx, boxes[:, 2] + hz], axis=1)


def bev_footprint(b: OrientedBox3D) -> Rect2D:
    r = bev_rects(b.as_array()[None, :])[0]
    return Rect2D(r[0], r[1], r[2], r[3], "bev")


# ---------------------------------------------------------------------------
# Box regression targets


@dataclass(frozen=True)
class RegressionTarget3D:
    t_x: float
    t_y: float
    t_z: float
    t_sx: float
    t_sy: float
    t_sz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.t_x, self.t_y, self.t_z, self.t_sx, self.t_sy, self.t_sz])


def encode_targets(proposal: OrientedBox3D, gt: OrientedBox3D) -> RegressionTarget3D:
    if min(gt.size) <= 0:
        raise GeometryError("ground-truth size must be positive")
    pc, ps = proposal.center, proposal.size
    gc, gs = gt.center, gt.size
    t = [(gc[i] - pc[i]) / ps[i] for i in range(3)]
    t += [math.log(gs[i] / ps[i]) for i in range(3)]
    return RegressionTarget3D(*t)


def decode_targets(t: RegressionTarget3D, proposal: OrientedBox3D) -> OrientedBox3D:
    pc, ps = proposal.center, proposal.size
    tc = (t.t_x, t.t_y, t.t_z)
    ts = (t.t_sx, t.t_sy, t.t_sz)
    center = tuple(pc[i] + tc[i] * ps[i] for i in range(3))
    size = tuple(ps[i] * math.exp(ts[i]) for i in range(3))
    return OrientedBox3D(center, size, proposal.azimuth, proposal.class_id, proposal.template_id)


def encode_targets_array(proposals: np.ndarray, gts: np.ndarray) -> np.ndarray:
    p = np.asarray(proposals, dtype=np.float64).reshape(-1, 7)
    g = np.asarray(gts, dtype=np.float64).reshape(-1, 7)
    if np.any(g[:, 3:6] <= 0):
        raise GeometryError("ground-truth size must be positive")
    return np.concatenate([(g[:, :3] - p[:, :3]) / p[:, 3:6], np.log(g[:, 3:6] / p[:, 3:6])], axis=1)


def decode_targets_array(targets: np.ndarray, proposals: np.ndarray) -> np.ndarray:
    p = np.asarray(proposals, dtype=np.float64).reshape(-1, 7)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 6)
    out = p.copy()
    out[:, :3] = p[:, :3] + t[:, :3] * p[:, 3:6]
    out[:, 3:6] = p[:, 3:6] * np.exp(t[:, 3:6])
    return out
