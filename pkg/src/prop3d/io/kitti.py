"""KITTI velodyne scans, object labels and calibration files."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geometry import CameraCalib, OrientedBox3D, PointCloud, project_boxes

KITTI_WIDTH, KITTI_HEIGHT = 1242, 375
DONT_CARE = "DontCare"
CLASS_IDS = {"Car": 0, "Van": 1, "Truck": 2, "Pedestrian": 3, "Person_sitting": 4, "Cyclist": 5, "Tram": 6,
             "Misc": 7}


class KittiFormatError(ValueError):
    pass


@dataclass(frozen=True)
class KittiCalib:
    camera: CameraCalib
    R0_rect: np.ndarray
    Tr_velo_to_cam: np.ndarray

    def velo_to_cam(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        return (pts @ self.Tr_velo_to_cam[:, :3].T + self.Tr_velo_to_cam[:, 3]) @ self.R0_rect.T

    def cam_to_velo(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        unrect = np.linalg.solve(self.R0_rect, pts.T).T
        R, t = self.Tr_velo_to_cam[:, :3], self.Tr_velo_to_cam[:, 3]
        return np.linalg.solve(R, (unrect - t).T).T


def read_calib(path, width: int = KITTI_WIDTH, height: int = KITTI_HEIGHT) -> KittiCalib:
    raw = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise KittiFormatError(f"{path}:{lineno}: expected 'KEY: values'")
            key, value = line.split(":", 1)
            try:
                raw[key.strip()] = np.array([float(v) for v in value.split()])
            except ValueError as exc:
                raise KittiFormatError(f"{path}:{lineno}: {exc}") from None

    def get(*names, n):
        for k in names:
            if k in raw:
                if raw[k].size != n:
                    raise KittiFormatError(f"{path}: {k} has {raw[k].size} values, expected {n}")
                return raw[k]
        return None

    P2 = get("P2", n=12)
    if P2 is None:
        raise KittiFormatError(f"{path}: missing P2")
    R0 = get("R0_rect", "R_rect", n=9)
    Tr = get("Tr_velo_to_cam", "Tr_velo_cam", n=12)
    return KittiCalib(CameraCalib(P2.reshape(3, 4), width, height),
                      np.eye(3) if R0 is None else R0.reshape(3, 3),
                      np.hstack([np.eye(3), np.zeros((3, 1))]) if Tr is None else Tr.reshape(3, 4))


def write_calib(calib: KittiCalib, path) -> None:
    fmt = lambda a: " ".join(f"{v:.12e}" for v in np.asarray(a).ravel())  # noqa: E731
    P = calib.camera.P
    with open(path, "w") as f:
        for k in ("P0", "P1", "P2", "P3"):
            f.write(f"{k}: {fmt(P)}\n")
        f.write(f"R0_rect: {fmt(calib.R0_rect)}\n")
        f.write(f"Tr_velo_to_cam: {fmt(calib.Tr_velo_to_cam)}\n")
        f.write(f"Tr_imu_to_velo: {fmt(np.hstack([np.eye(3), np.zeros((3, 1))]))}\n")


def read_velodyne(path, calib: Optional[KittiCalib] = None) -> PointCloud:
    """Little-endian float32 (x, y, z, reflectance) records; converted to the camera frame when
    ``calib`` is given."""
    size = os.path.getsize(path)
    if size % 16:
        raise KittiFormatError(f"{path}: truncated record at byte offset {size - size % 16} "
                               f"(file size {size} is not a multiple of 16)")
    data = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    xyz = data[:, :3].astype(np.float64)
    if calib is None:
        return PointCloud(xyz, frame="velodyne")
    return PointCloud(calib.velo_to_cam(xyz))


def write_velodyne(path, xyz, reflectance=None) -> None:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    out = np.zeros((xyz.shape[0], 4), dtype="<f4")
    out[:, :3] = xyz
    if reflectance is not None:
        out[:, 3] = reflectance
    out.tofile(path)


@dataclass(frozen=True)
class KittiLabel:
    type: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: tuple
    dimensions: tuple  # (h, w, l)
    location: tuple  # bottom center, camera frame
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_dont_care(self) -> bool:
        return self.type == DONT_CARE

    def to_box(self) -> OrientedBox3D:
        h, w, l = self.dimensions
        x, y, z = self.location
        return OrientedBox3D((x, y - 0.5 * h, z), (l, h, w), self.rotation_y, CLASS_IDS.get(self.type))

    def to_line(self) -> str:
        vals = [self.type, f"{self.truncation:.2f}", str(int(self.occlusion)), f"{self.alpha:.2f}"]
        vals += [f"{v:.2f}" for v in self.bbox] + [f"{v:.4f}" for v in self.dimensions]
        vals += [f"{v:.4f}" for v in self.location] + [f"{self.rotation_y:.4f}"]
        if self.score is not None:
            vals.append(f"{self.score:.4f}")
        return " ".join(vals)


def parse_label_line(line: str, where: str = "") -> KittiLabel:
    f = line.split()
    if len(f) not in (15, 16):
        raise KittiFormatError(f"{where}: expected 15 or 16 fields, found {len(f)}")
    try:
        v = [float(x) for x in f[1:]]
    except ValueError as exc:
        raise KittiFormatError(f"{where}: {exc}") from None
    lab = KittiLabel(f[0], v[0], int(v[1]), v[2], tuple(v[3:7]), tuple(v[7:10]), tuple(v[10:13]), v[13],
                     v[14] if len(v) == 15 else None)
    if not lab.is_dont_care and min(lab.dimensions) <= 0:
        raise KittiFormatError(f"{where}: non-positive dimensions {lab.dimensions}")
    return lab


def read_labels(path) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                out.append(parse_label_line(line, f"{path}:{lineno}"))
    return out


def write_labels(labels, path) -> None:
    with open(path, "w") as f:
        for lab in labels:
            f.write(lab.to_line() + "\n")


def labels_to_boxes(labels) -> list:
    """GT boxes of all labels except DontCare."""
    return [lab.to_box() for lab in labels if not lab.is_dont_care]


def box_to_label(box: OrientedBox3D, type_: str, calib: Optional[CameraCalib] = None,
                 truncation: float = 0.0, occlusion: int = 0) -> KittiLabel:
    sx, sy, sz = box.size
    cx, cy, cz = box.center
    ry = box.azimuth if box.azimuth <= math.pi else box.azimuth - 2 * math.pi
    bbox = (0.0, 0.0, 0.0, 0.0)
    if calib is not None:
        bbox = tuple(float(v) for v in project_boxes(box.as_array()[None, :], calib)[0])
    return KittiLabel(type_, truncation, occlusion, ry - math.atan2(cx, cz), bbox, (sy, sz, sx),
                      (cx, cy + 0.5 * sy, cz), ry)
