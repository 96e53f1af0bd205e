"""Dataset-level glue: scene loading, class-model fitting and weight training."""
from __future__ import annotations

import glob
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .energy import ClassModel, build_scene_grids, provenance
from .evaluation import GTObject
from .geometry import CameraCalib, PointCloud
from .ground import GroundError, GroundPlane, estimate_ground_direct
from .io import kitti
from .learning import LearningError, _mle, SsvmConfig, SsvmResult, fit_templates, scene_for_training, train_ssvm
from .sampler import DEFAULT_ROAD_Y, ProposeConfig, enumerate_candidates, score_candidates

log = logging.getLogger(__name__)

UNTRAINED_WEIGHTS = (-1.0, -1.0, -1.0, 0.0)


class DatasetError(ValueError):
    pass


@dataclass
class Scene:
    """One frame: camera-frame cloud, calibration, road plane and labelled objects."""

    scene_id: str
    cloud: PointCloud
    calib: Optional[CameraCalib]
    plane: Optional[GroundPlane]
    labels: list = field(default_factory=list)

    def gt_boxes(self, class_name: Optional[str] = None) -> list:
        return [lab.to_box() for lab in self.labels
                if not lab.is_dont_care and (class_name is None or lab.type.lower() == class_name.lower())]

    def gt_objects(self) -> list:
        return [label_to_gt(lab) for lab in self.labels if not lab.is_dont_care]


def label_to_gt(lab: kitti.KittiLabel) -> GTObject:
    rect = tuple(lab.bbox) if lab.bbox[2] > lab.bbox[0] and lab.bbox[3] > lab.bbox[1] else None
    return GTObject(lab.to_box(), rect, lab.type.lower(), int(lab.occlusion), float(lab.truncation))


def read_plane(path) -> GroundPlane:
    """KITTI road-plane file: the last line holds (a, b, c, d) of a.p + d = 0."""
    with open(path) as f:
        rows = [ln.split() for ln in f if ln.strip() and not ln.startswith("#")]
    try:
        vals = [float(v) for v in rows[-1]]
    except (IndexError, ValueError):
        raise DatasetError(f"{path}: no plane coefficients found") from None
    if len(vals) != 4:
        raise DatasetError(f"{path}: expected 4 plane coefficients, found {len(vals)}")
    return GroundPlane(tuple(vals[:3]), vals[3])


def write_plane(plane: GroundPlane, path) -> None:
    n = plane.normal
    with open(path, "w") as f:
        f.write("# Plane\nWidth 4\nHeight 1\n")
        f.write(f"{n[0]:.6e} {n[1]:.6e} {n[2]:.6e} {plane.offset:.6e}\n")


def scene_ids(root) -> list:
    label_dir = os.path.join(root, "label_2")
    velo_dir = os.path.join(root, "velodyne")
    src = label_dir if os.path.isdir(label_dir) else velo_dir
    if not os.path.isdir(src):
        raise DatasetError(f"{root}: neither label_2/ nor velodyne/ found")
    return sorted(os.path.splitext(os.path.basename(p))[0] for p in glob.glob(os.path.join(src, "*")))


def load_scene(root, scene_id: str, with_cloud: bool = True) -> Scene:
    calib_path = os.path.join(root, "calib", scene_id + ".txt")
    kc = kitti.read_calib(calib_path) if os.path.exists(calib_path) else None
    cloud = PointCloud.empty()
    if with_cloud:
        velo = os.path.join(root, "velodyne", scene_id + ".bin")
        if not os.path.exists(velo):
            raise DatasetError(f"missing point cloud {velo}")
        if kc is None:
            raise DatasetError(f"missing calibration {calib_path}")
        cloud = kitti.read_velodyne(velo, kc)
    plane_path = os.path.join(root, "planes", scene_id + ".txt")
    plane = read_plane(plane_path) if os.path.exists(plane_path) else None
    label_path = os.path.join(root, "label_2", scene_id + ".txt")
    labels = kitti.read_labels(label_path) if os.path.exists(label_path) else []
    return Scene(scene_id, cloud, kc.camera if kc else None, plane, labels)


def iter_scenes(root, with_cloud: bool = True, limit: Optional[int] = None) -> Iterable[Scene]:
    ids = scene_ids(root)
    if limit is not None:
        ids = ids[:limit]
    for sid in ids:
        yield load_scene(root, sid, with_cloud)


def scene_plane(scene: Scene, cfg: ProposeConfig) -> GroundPlane:
    if scene.plane is not None:
        return scene.plane
    if len(scene.cloud):
        try:
            return estimate_ground_direct(scene.cloud, iterations=cfg.ransac_iterations,
                                          inlier_threshold=cfg.ransac_threshold, seed=cfg.seed)
        except GroundError as exc:
            log.warning("scene %s: ground estimation failed (%s)", scene.scene_id, exc)
    return GroundPlane.horizontal(DEFAULT_ROAD_Y)


# ---------------------------------------------------------------------------
# Fitting


def fit_class_model(scenes: Iterable[Scene], class_name: str, templates=None, min_cluster: int = 1,
                    cfg: Optional[ProposeConfig] = None) -> ClassModel:
    """Templates (unless given), height statistics and road sigma from labelled scenes."""
    cfg = cfg or ProposeConfig()
    boxes, centers, bottoms = [], [], []
    for sc in scenes:
        b = sc.gt_boxes(class_name)
        if not b:
            continue
        plane = scene_plane(sc, cfg)
        boxes += b
        arr = np.array([x.as_array() for x in b])
        centers += plane.height_above(arr[:, :3]).tolist()
        bottoms += plane.height_above(arr[:, :3] + np.outer(0.5 * arr[:, 4], [0.0, 1.0, 0.0])).tolist()
    if len(boxes) < 2:
        raise LearningError(f"class {class_name!r}: need at least two labelled boxes, found {len(boxes)}")
    if templates is None:
        templates = fit_templates(np.array([b.size for b in boxes]), min_cluster=min_cluster)
    mu, sigma = _mle(centers)
    _, sigma_road = _mle(bottoms)
    if not sigma > 0:
        raise LearningError(f"class {class_name!r}: object heights have zero spread")
    payload = np.array([b.as_array() for b in boxes]).tobytes()
    return ClassModel(class_name, UNTRAINED_WEIGHTS, templates, mu, sigma, sigma_road,
                      kitti.CLASS_IDS.get(class_name.capitalize()),
                      provenance(payload, n_boxes=len(boxes), weights="untrained"))


def training_pairs(scenes: Iterable[Scene], model: ClassModel, cfg: Optional[ProposeConfig] = None) -> list:
    """Candidates and potentials of every scene, split into one training pair per GT object."""
    cfg = cfg or ProposeConfig()
    pairs = []
    for sc in scenes:
        gts = sc.gt_boxes(model.name) if not model.is_shared else sc.gt_boxes()
        if not gts:
            continue
        plane = scene_plane(sc, cfg)
        grids = build_scene_grids(sc.cloud, cfg.grid, plane, [model], cfg.camera_origin)
        cands = enumerate_candidates(model, plane, grids.spec, grids.occ, sc.calib, cfg.far_threshold, cfg.stride)
        if len(cands) == 0:
            log.warning("scene %s: no candidates, skipped", sc.scene_id)
            continue
        cands = score_candidates(cands, grids, model, cfg.margin)
        ts = scene_for_training(sc.scene_id, grids, model, gts, cands.boxes, cands.phi, plane, cfg.stride)
        pairs += [p for p in ts.pairs() if p.cand_phi.shape[0]]
    return pairs


def train_weights(scenes: Iterable[Scene], model: ClassModel, ssvm: Optional[SsvmConfig] = None,
                  cfg: Optional[ProposeConfig] = None) -> tuple:
    """(model with learned weights, SsvmResult)."""
    pairs = training_pairs(scenes, model, cfg)
    if not pairs:
        raise LearningError("no training pairs: no labelled objects with candidates")
    res: SsvmResult = train_ssvm(pairs, ssvm)
    out = model.with_weights(res.w)
    out.provenance = dict(out.provenance, weights="ssvm", n_pairs=len(pairs), converged=res.converged,
                          rounds=res.rounds)
    return out, res
