"""Depth / disparity images: back-projection, HHA encoding, and plain netpbm fixtures."""
from __future__ import annotations

import numpy as np

from ..geometry import CameraCalib, PointCloud
from ..ground import GroundPlane

KITTI_BASELINE = 0.54
HHA_RANGES = {"disparity": (0.0, 64.0), "height": (-1.0, 4.0), "angle": (0.0, np.pi)}


class DepthError(ValueError):
    pass


def _check_shape(img: np.ndarray, calib: CameraCalib) -> None:
    if img.shape[:2] != (calib.height, calib.width):
        raise DepthError(f"image is {img.shape[1]}x{img.shape[0]}, calibration says {calib.width}x{calib.height}")


def disparity_to_depth(disparity, focal: float, baseline: float = KITTI_BASELINE) -> np.ndarray:
    if focal <= 0 or baseline <= 0:
        raise DepthError("focal length and baseline must be positive")
    d = np.asarray(disparity, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(d > 0, focal * baseline / np.where(d > 0, d, 1.0), 0.0)


def point_map(depth: np.ndarray, calib: CameraCalib) -> np.ndarray:
    """(H, W, 3) back-projected points; NaN where depth is invalid."""
    z = np.asarray(depth, dtype=np.float64)
    h, w = z.shape
    fx, fy = calib.P[0, 0], calib.P[1, 1]
    cx, cy = calib.P[0, 2], calib.P[1, 2]
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    valid = np.isfinite(z) & (z > 0)
    zz = np.where(valid, z, np.nan)
    return np.stack([(u - cx) * zz / fx, (v - cy) * zz / fy, zz], axis=-1)


def depth_to_cloud(image, calib: CameraCalib, mode: str = "depth", baseline: float = KITTI_BASELINE) -> PointCloud:
    """Back-project every valid pixel (row-major order) through the pinhole model."""
    img = np.asarray(image, dtype=np.float64)
    _check_shape(img, calib)
    if calib.focal <= 0:
        raise DepthError("focal length must be positive")
    if mode == "disparity":
        img = disparity_to_depth(img, calib.focal, baseline)
    elif mode != "depth":
        raise DepthError(f"unknown mode {mode!r}")
    pm = point_map(img, calib)
    valid = np.isfinite(pm[..., 2])
    return PointCloud(pm[valid])


def hha_channels(depth, calib: CameraCalib, plane: GroundPlane, baseline: float = KITTI_BASELINE) -> np.ndarray:
    """Unscaled (disparity px, height above road m, normal-to-gravity angle rad); NaN where undefined."""
    z = np.asarray(depth, dtype=np.float64)
    _check_shape(z, calib)
    pm = point_map(z, calib)
    valid = np.isfinite(pm[..., 2])
    disp = np.where(valid, calib.focal * baseline / np.where(valid, pm[..., 2], 1.0), np.nan)
    height = np.einsum("hwc,c->hw", pm, np.asarray(plane.normal)) + plane.offset
    # central differences in the interior, one-sided at the border
    du = np.gradient(pm, axis=1)
    dv = np.gradient(pm, axis=0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.abs(np.einsum("hwc,c->hw", n, np.asarray(plane.normal))) / norm
    angle = np.arccos(np.clip(cosang, 0.0, 1.0))
    angle = np.where(np.isfinite(cosang) & (norm > 0), angle, np.nan)
    return np.stack([disp, height, angle], axis=-1)


def encode_hha(depth, calib: CameraCalib, plane: GroundPlane, baseline: float = KITTI_BASELINE) -> np.ndarray:
    """Three-channel uint8 HHA image; invalid pixels are 0 in every channel."""
    raw = hha_channels(depth, calib, plane, baseline)
    out = np.zeros(raw.shape, dtype=np.uint8)
    valid = np.isfinite(raw[..., 0])
    for c, key in enumerate(("disparity", "height", "angle")):
        lo, hi = HHA_RANGES[key]
        ch = raw[..., c]
        ok = valid & np.isfinite(ch)
        scaled = np.clip((np.where(ok, ch, lo) - lo) / (hi - lo), 0.0, 1.0) * 255.0
        out[..., c] = np.where(ok, np.round(scaled), 0).astype(np.uint8)
    return out


# ---------------------------------------------------------------------------
# netpbm


def read_pnm(path) -> np.ndarray:
    """PGM/PPM in plain (P2/P3) or raw (P5/P6) form; 16-bit raw is big-endian."""
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def token():
        nonlocal pos
        while True:
            while pos < len(data) and data[pos:pos + 1].isspace():
                pos += 1
            if data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
                continue
            break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        return data[start:pos].decode("ascii")

    magic = token()
    if magic not in ("P2", "P3", "P5", "P6"):
        raise DepthError(f"{path}: unsupported netpbm magic {magic!r}")
    w, h, maxval = int(token()), int(token()), int(token())
    ch = 3 if magic in ("P3", "P6") else 1
    if magic in ("P2", "P3"):
        vals = [int(token()) for _ in range(w * h * ch)]
        arr = np.array(vals, dtype=np.uint16 if maxval > 255 else np.uint8)
    else:
        pos += 1
        dt = ">u2" if maxval > 255 else "u1"
        arr = np.frombuffer(data, dtype=dt, count=w * h * ch, offset=pos).astype(
            np.uint16 if maxval > 255 else np.uint8)
    return arr.reshape((h, w, ch) if ch == 3 else (h, w))


def write_pnm(path, img, maxval: int | None = None) -> None:
    img = np.asarray(img)
    ch = 3 if img.ndim == 3 else 1
    maxval = maxval or (65535 if img.dtype == np.uint16 or img.max(initial=0) > 255 else 255)
    magic = b"P6" if ch == 3 else b"P5"
    dt = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(magic + f"\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        f.write(np.ascontiguousarray(img, dtype=dt).tobytes())


# ---------------------------------------------------------------------------
# point-cloud CSV


def write_cloud_csv(cloud: PointCloud, path) -> None:
    np.savetxt(path, cloud.points, delimiter=",", header="x,y,z", comments="", fmt="%.6f")


def read_cloud_csv(path) -> PointCloud:
    with open(path) as f:
        rows = [line for line in f.readlines()[1:] if line.strip()]
    if not rows:
        return PointCloud.empty()
    pts = np.loadtxt(rows, delimiter=",", ndmin=2)
    if pts.size and pts.shape[1] != 3:
        raise DepthError(f"{path}: expected 3 columns, found {pts.shape[1]}")
    return PointCloud(pts.reshape(-1, 3))
