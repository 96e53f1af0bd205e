"""Candidate enumeration on the road plane, exhaustive scoring, and greedy NMS."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .energy import (CONTRAST_MARGIN, ClassModel, SceneGrids, build_scene_grids, energies,
                     potentials_from_ranges)
from .geometry import CameraCalib, OrientedBox3D, PointCloud, bev_rects, project_boxes
from .ground import GroundError, GroundPlane, estimate_ground_direct
from .voxels import GridSpec, IntegralGrid, axis_range, box_ranges, range_counts

log = logging.getLogger(__name__)

NMS_DELTA = 0.75
FAR_THRESHOLD = 20.0
DEFAULT_K = 2000
ORIENTATIONS = (0.0, 0.5 * math.pi)
PLANE_ROAD, PLANE_UP, PLANE_DOWN = 0, 1, 2
NMS_MODES = ("image", "bev")
DEFAULT_ROAD_Y = 1.65


class SamplerError(ValueError):
    pass


@dataclass
class CandidateSet:
    """Grid-aligned candidate boxes with provenance; energies are filled by ``score_candidates``."""

    boxes: np.ndarray
    template_id: np.ndarray
    orientation: np.ndarray
    plane_id: np.ndarray
    ranges: np.ndarray
    class_name: str = ""
    rects: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    energies: Optional[np.ndarray] = None
    n_raw: int = 0

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def box(self, i: int) -> OrientedBox3D:
        return OrientedBox3D.from_array(self.boxes[i], template_id=int(self.template_id[i]))

    def subset(self, idx) -> "CandidateSet":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return CandidateSet(self.boxes[idx], self.template_id[idx], self.orientation[idx],
                            self.plane_id[idx], self.ranges[idx], self.class_name, pick(self.rects),
                            pick(self.phi), pick(self.energies), self.n_raw)

    @classmethod
    def empty(cls, class_name: str = "") -> "CandidateSet":
        return cls(np.zeros((0, 7)), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64),
                   np.zeros((0, 6), np.int64), class_name, np.zeros((0, 4)))


def sample_positions(spec: GridSpec, stride: float):
    """Box center (x, z) positions: cell centers of a ``stride`` lattice over the grid footprint."""
    lo, hi = spec.origin, spec.upper
    nx = int(math.floor((hi[0] - lo[0]) / stride + 1e-9))
    nz = int(math.floor((hi[2] - lo[2]) / stride + 1e-9))
    xs = lo[0] + (np.arange(nx) + 0.5) * stride
    zs = lo[2] + (np.arange(nz) + 0.5) * stride
    return xs, zs


def enumerate_candidates(model: ClassModel, plane: GroundPlane, spec: GridSpec, occ_integral: IntegralGrid,
                         camera: Optional[CameraCalib] = None, far_threshold: float = FAR_THRESHOLD,
                         stride: Optional[float] = None) -> CandidateSet:
    """All template x orientation boxes resting on the road (and on road +- sigma_road past
    ``far_threshold``), minus boxes with no occupied voxel and boxes outside the image."""
    if not model.templates:
        raise SamplerError("model has no size templates")
    stride = spec.voxel_size if stride is None else stride
    xs, zs = sample_positions(spec, stride)
    X, Z = np.meshgrid(xs, zs, indexing="xy")
    X, Z = X.ravel(), Z.ravel()
    ix = np.tile(np.arange(xs.size), zs.size)
    iz = np.repeat(np.arange(zs.size), xs.size)
    road_y = plane.y_at(X, Z)
    far = np.flatnonzero(Z > far_threshold)
    planes = [(PLANE_ROAD, 0.0)]
    if model.sigma_road > 0:
        planes += [(PLANE_UP, model.sigma_road), (PLANE_DOWN, -model.sigma_road)]
    parts = []
    n_raw = 0
    for t, size in enumerate(model.templates):
        for o, az in enumerate(ORIENTATIONS):
            # grid-aligned boxes: the x and z voxel ranges depend on the lattice column only
            hx = 0.5 * (size[2] if o == 1 else size[0])
            hz = 0.5 * (size[0] if o == 1 else size[2])
            hy = 0.5 * size[1]
            x0, x1 = axis_range(spec, 0, xs - hx, xs + hx)
            z0, z1 = axis_range(spec, 2, zs - hz, zs + hz)
            for pid, dy in planes:
                sel = slice(None) if pid == PLANE_ROAD else far
                jx, jz = ix[sel], iz[sel]
                if jx.size == 0:
                    continue
                n_raw += jx.size
                cy = (road_y[sel] + dy) - 0.5 * size[1]
                y0, y1 = axis_range(spec, 1, cy - hy, cy + hy)
                r = np.stack([x0[jx], x1[jx], y0, y1, z0[jz], z1[jz]], axis=1)
                live = range_counts(r) > 0
                live[live] = kernels.box_sums(occ_integral.S, r[live]) > 0
                if not live.any():
                    continue
                k = int(live.sum())
                boxes = np.empty((k, 7))
                boxes[:, 0] = xs[jx[live]]
                boxes[:, 1] = cy[live]
                boxes[:, 2] = zs[jz[live]]
                boxes[:, 3:6] = size
                boxes[:, 6] = az
                parts.append((boxes, np.full(k, t), np.full(k, o), np.full(k, pid), r[live]))
    if not parts:
        out = CandidateSet.empty(model.name)
        out.n_raw = n_raw
        return out
    boxes = np.concatenate([p[0] for p in parts])
    cands = CandidateSet(boxes, np.concatenate([p[1] for p in parts]), np.concatenate([p[2] for p in parts]),
                         np.concatenate([p[3] for p in parts]), np.concatenate([p[4] for p in parts]),
                         model.name, n_raw=n_raw)
    if camera is not None:
        rects = project_boxes(boxes, camera)
        visible = np.all(np.isfinite(rects), axis=1) & (rects[:, 2] > rects[:, 0]) & (rects[:, 3] > rects[:, 1])
        cands.rects = rects
        cands = cands.subset(np.flatnonzero(visible))
    return cands


def score_candidates(cands: CandidateSet, grids: SceneGrids, model: ClassModel,
                     margin: float = CONTRAST_MARGIN) -> CandidateSet:
    out = replace(cands)
    if len(cands) == 0:
        out.phi = np.zeros((0, 4))
        out.energies = np.zeros(0)
        return out
    rp, _ = box_ranges(grids.spec, cands.boxes, margin)
    out.phi = potentials_from_ranges(grids, cands.ranges, rp, model)
    out.energies = energies(out.phi, model.weights)
    return out


# ---------------------------------------------------------------------------
# NMS


def rank_order(cands: CandidateSet) -> np.ndarray:
    """Energy ascending; ties broken by (z, x, template, orientation, plane)."""
    if cands.energies is None:
        raise SamplerError("candidates must be scored before ranking")
    b = cands.boxes
    return np.lexsort((cands.plane_id, cands.orientation, cands.template_id, b[:, 0], b[:, 2], cands.energies))


def nms_rects_for(cands: CandidateSet, mode: str, calib: Optional[CameraCalib]) -> np.ndarray:
    if mode == "image":
        if cands.rects is not None:
            return cands.rects
        if calib is None:
            raise SamplerError("image-plane NMS needs camera calibration")
        return project_boxes(cands.boxes, calib)
    if mode == "bev":
        return bev_rects(cands.boxes)
    raise SamplerError(f"unknown NMS mode {mode!r}")


@dataclass
class ProposalList:
    boxes: np.ndarray
    energies: np.ndarray
    template_id: np.ndarray
    orientation: np.ndarray
    plane_id: np.ndarray
    class_name: str
    K: int
    nms_mode: str
    delta: float
    rects: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    timings: dict = field(default_factory=dict)
    plane: Optional[GroundPlane] = None

    def __len__(self) -> int:
        return self.boxes.shape[0]

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(len(self))

    def box(self, i: int) -> OrientedBox3D:
        return OrientedBox3D.from_array(self.boxes[i], template_id=int(self.template_id[i]))

    @classmethod
    def empty(cls, class_name: str, K: int, mode: str, delta: float) -> "ProposalList":
        return cls(np.zeros((0, 7)), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64),
                   np.zeros(0, np.int64), class_name, K, mode, delta, np.zeros((0, 4)), np.zeros((0, 4)))


def greedy_nms(cands: CandidateSet, K: int, delta: float = NMS_DELTA, mode: str = "image",
               calib: Optional[CameraCalib] = None) -> ProposalList:
    """Repeatedly take the lowest-energy candidate whose 2D IoU with every taken one is below ``delta``."""
    if K <= 0:
        raise SamplerError("K must be positive")
    if mode not in NMS_MODES:
        raise SamplerError(f"unknown NMS mode {mode!r}")
    if len(cands) == 0:
        return ProposalList.empty(cands.class_name, K, mode, delta)
    order = rank_order(cands)
    rects = nms_rects_for(cands, mode, calib)
    kept = order[kernels.nms_rects(rects[order], K, delta)]
    sel = cands.subset(kept)
    img = sel.rects if sel.rects is not None else (project_boxes(sel.boxes, calib) if calib is not None else None)
    return ProposalList(sel.boxes, sel.energies, sel.template_id, sel.orientation, sel.plane_id,
                        cands.class_name, K, mode, delta, img, sel.phi)


def reference_nms(rects: np.ndarray, energies_: np.ndarray, tiebreak: np.ndarray, K: int, delta: float) -> list:
    """Quadratic textbook NMS: pick the best live candidate, suppress its overlaps, repeat."""
    from .geometry import iou_2d_matrix

    n = rects.shape[0]
    order = np.lexsort(tuple(tiebreak.T[::-1]) + (energies_,))
    iou = iou_2d_matrix(rects, rects)
    alive = np.ones(n, dtype=bool)
    out = []
    for i in order:
        if len(out) >= K:
            break
        if not alive[i]:
            continue
        out.append(int(i))
        alive &= iou[i] < delta
    return out


# ---------------------------------------------------------------------------
# End to end


@dataclass
class ProposeConfig:
    grid: GridSpec = field(default_factory=GridSpec.kitti_default)
    stride: Optional[float] = None
    delta: float = NMS_DELTA
    K: int = DEFAULT_K
    far_threshold: float = FAR_THRESHOLD
    margin: float = CONTRAST_MARGIN
    nms_mode: str = "image"
    plane: Optional[GroundPlane] = None
    default_plane: GroundPlane = field(default_factory=lambda: GroundPlane.horizontal(DEFAULT_ROAD_Y))
    ransac_iterations: int = 500
    ransac_threshold: float = 0.05
    camera_origin: tuple = (0.0, 0.0, 0.0)
    seed: int = 0


def estimate_plane(cloud: PointCloud, cfg: ProposeConfig) -> GroundPlane:
    if cfg.plane is not None:
        return cfg.plane
    try:
        return estimate_ground_direct(cloud, iterations=cfg.ransac_iterations,
                                      inlier_threshold=cfg.ransac_threshold, seed=cfg.seed)
    except GroundError as exc:
        log.warning("ground plane estimation failed (%s); using the default plane", exc)
        return cfg.default_plane


def propose(cloud: PointCloud, calib: Optional[CameraCalib], model: ClassModel,
            config: Optional[ProposeConfig] = None, grids: Optional[SceneGrids] = None) -> ProposalList:
    cfg = config or ProposeConfig()
    timings = {}
    t0 = time.perf_counter()

    def lap(name):
        nonlocal t0
        t = time.perf_counter()
        timings[name] = 1e3 * (t - t0)
        t0 = t

    if len(cloud) == 0:
        out = ProposalList.empty(model.name, cfg.K, cfg.nms_mode, cfg.delta)
        out.timings = timings
        return out
    plane = estimate_plane(cloud, cfg)
    lap("ground_ms")
    if grids is None:
        grids = build_scene_grids(cloud, cfg.grid, plane, [model], cfg.camera_origin)
    elif model.name not in grids.height:
        from .energy import add_height_grid
        add_height_grid(grids, plane, model)
    lap("grids_ms")
    cands = enumerate_candidates(model, plane, grids.spec, grids.occ, calib, cfg.far_threshold, cfg.stride)
    lap("enumerate_ms")
    cands = score_candidates(cands, grids, model, cfg.margin)
    lap("score_ms")
    props = greedy_nms(cands, cfg.K, cfg.delta, cfg.nms_mode, calib)
    lap("nms_ms")
    props.timings = timings
    props.timings["n_candidates"] = len(cands)
    props.plane = plane
    return props


# ---------------------------------------------------------------------------
# Output

CSV_FIELDS = ["rank", "energy", "cx", "cy", "cz", "sx", "sy", "sz", "azimuth_deg", "class", "template_id"]


def write_proposals_csv(props: ProposalList, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for i in range(len(props)):
            b = props.boxes[i]
            w.writerow([i, repr(float(props.energies[i]))] + [repr(float(v)) for v in b[:6]]
                       + [repr(math.degrees(float(b[6]))), props.class_name, int(props.template_id[i])])


def read_proposals_csv(path):
    """(boxes (N, 7), energies (N,), class names) from a proposal CSV."""
    boxes, en, names = [], [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            boxes.append([float(row[k]) for k in ("cx", "cy", "cz", "sx", "sy", "sz")]
                         + [math.radians(float(row["azimuth_deg"]))])
            en.append(float(row["energy"]))
            names.append(row["class"])
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 7), np.asarray(en), names


def write_proposals_kitti(props: ProposalList, path, calib: Optional[CameraCalib] = None) -> None:
    """KITTI detection lines; the score column is the negated energy so higher means better."""
    rects = props.rects
    if rects is None:
        if calib is None:
            raise SamplerError("KITTI output needs image rects or a calibration")
        rects = project_boxes(props.boxes, calib)
    label = props.class_name.capitalize() if props.class_name else "Object"
    with open(path, "w") as f:
        for i in range(len(props)):
            cx, cy, cz, sx, sy, sz, az = props.boxes[i]
            ry = az if az <= math.pi else az - 2 * math.pi
            alpha = ry - math.atan2(cx, cz)
            x1, y1, x2, y2 = rects[i]
            f.write(f"{label} -1 -1 {alpha:.4f} {x1:.2f} {y1:.2f} {x2:.2f} {y2:.2f} "
                    f"{sy:.4f} {sz:.4f} {sx:.4f} {cx:.4f} {cy + 0.5 * sy:.4f} {cz:.4f} {ry:.4f} "
                    f"{-props.energies[i]:.6f}\n")
