"""``prop3d`` command line: synthetic data, model fitting, training, proposals and recall.

Exit status: 0 ok, 1 runtime failure, 2 usage error (bad flag, bad config, missing file).
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
import time
from typing import Optional

import numpy as np

from . import evaluation as ev
from .energy import ClassModel
from .geometry import project_boxes
from .ground import (N_FEATURES, GroundClassifier, GroundPlane, SuperpixelFeatures, estimate_ground,
                     estimate_ground_direct, train_ground_classifier)
from .io import depth, kitti
from .io.synthetic import SyntheticSceneSpec, generate_synthetic_scene
from .learning import SsvmConfig
from .pipeline import (fit_class_model, iter_scenes, label_to_gt, read_plane, train_weights, write_plane)
from .sampler import (DEFAULT_K, FAR_THRESHOLD, NMS_DELTA, NMS_MODES, ProposeConfig, propose,
                      read_proposals_csv, write_proposals_csv, write_proposals_kitti)
from .energy import CONTRAST_MARGIN
from .voxels import DEFAULT_VOXEL, GridSpec

log = logging.getLogger("prop3d")

# velodyne (x fwd, y left, z up) -> camera (x right, y down, z fwd)
SYNTH_TR_VELO_TO_CAM = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
DEFAULT_BUDGETS = "1,2,5,10,20,50,100,200,500,1000,2000"


class UsageError(Exception):
    pass


# name -> (default, help, paper-sourced)
OPTIONS = {
    "voxel_size": (DEFAULT_VOXEL, "voxel edge in meters", True),
    "grid_lo": ("-35,-2.5,0", "grid lower corner x,y,z (camera frame, meters)", False),
    "grid_hi": ("35,1.5,70", "grid upper corner x,y,z", False),
    "stride": (None, "candidate lattice stride in meters (default: voxel size)", False),
    "delta": (NMS_DELTA, "NMS IoU threshold", True),
    "k": (DEFAULT_K, "number of proposals kept", True),
    "far_threshold": (FAR_THRESHOLD, "depth beyond which road +- sigma_road planes are sampled", True),
    "margin": (CONTRAST_MARGIN, "contrast shell margin in meters", True),
    "nms": ("image", "NMS overlap space: image or bev", False),
    "ransac_iterations": (500, "RANSAC hypotheses", False),
    "ransac_threshold": (0.05, "RANSAC inlier distance in meters", False),
    "seed": (0, "random seed", False),
    "threads": (1, "worker threads (results do not depend on it)", False),
    "n_templates": (3, "maximum number of size templates", True),
    "min_cluster": (1, "smallest cluster kept as a template", False),
    "C": (1.0, "structured SVM regularization", False),
    "tolerance": (1e-3, "cutting-plane violation tolerance", False),
    "max_rounds": (100, "cutting-plane rounds", False),
    "epochs": (500, "gradient-descent epochs", False),
    "lr": (0.5, "learning rate", False),
    "iou": (0.7, "IoU threshold", False),
    "space": ("2d", "IoU space: 2d, bev or 3d", False),
    "difficulty": ("all", "easy, moderate, hard or all", False),
    "budgets": (DEFAULT_BUDGETS, "comma-separated proposal budgets", False),
    "n": (10, "number of scenes", False),
    "preset": ("default", "scene preset: default or kitti", False),
    "n_objects": ("1,5", "min,max objects per scene", False),
    "distance": ("5,50", "min,max object distance in meters", False),
    "noise": (0.02, "point noise sigma in meters", False),
    "class_": ("car", "object class", False),
}


def _add(p: argparse.ArgumentParser, name: str, type_=None, flag: Optional[str] = None, choices=None):
    default, text, paper = OPTIONS[name]
    flag = flag or "--" + name.rstrip("_").replace("_", "-")
    mark = " [paper]" if paper else ""
    p.add_argument(flag, dest=name, type=type_, default=None, choices=choices,
                   help=f"{text} (default: {default}){mark}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option values; flags given on the command line win")
    p.add_argument("--timing", action="store_true", help="print per-stage milliseconds to stderr")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    _add(p, "seed", int)
    _add(p, "threads", int)


def _sampling(p: argparse.ArgumentParser) -> None:
    _add(p, "voxel_size", float)
    _add(p, "grid_lo")
    _add(p, "grid_hi")
    _add(p, "stride", float)
    _add(p, "delta", float)
    _add(p, "k", int)
    _add(p, "far_threshold", float)
    _add(p, "margin", float)
    _add(p, "nms", choices=NMS_MODES)
    _add(p, "ransac_iterations", int)
    _add(p, "ransac_threshold", float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prop3d", description="Depth-informed 3D object proposals.",
                                 epilog="Defaults marked [paper] follow the published method.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth-gen", help="write seeded synthetic scenes in KITTI layout")
    _common(p)
    p.add_argument("--out", required=True, help="output dataset root")
    _add(p, "n", int)
    _add(p, "preset", choices=("default", "kitti"))
    _add(p, "n_objects")
    _add(p, "distance")
    _add(p, "noise", float)

    p = sub.add_parser("fit-templates", help="cluster labelled box sizes into templates")
    _common(p)
    p.add_argument("--data", required=True, help="dataset root with label_2/")
    _add(p, "class_", flag="--class")
    _add(p, "n_templates", int)
    _add(p, "min_cluster", int)
    p.add_argument("--out", required=True, help="templates JSON")

    p = sub.add_parser("fit-stats", help="height statistics and road sigma; writes an untrained class model")
    _common(p)
    _sampling(p)
    p.add_argument("--data", required=True, help="dataset root with label_2/ (planes/ or velodyne/ for the road)")
    _add(p, "class_", flag="--class")
    p.add_argument("--templates", help="templates JSON from fit-templates (default: fit here)")
    _add(p, "min_cluster", int)
    p.add_argument("--out", required=True, help="class model JSON")

    p = sub.add_parser("train-ground", help="train the superpixel ground classifier")
    _common(p)
    p.add_argument("--features", required=True, help=f"CSV with f0..f{N_FEATURES - 1} and a 'ground' 0/1 column")
    _add(p, "epochs", int)
    _add(p, "lr", float)
    p.add_argument("--out", required=True, help="classifier JSON")

    p = sub.add_parser("train-weights", help="learn energy weights with the structured SVM")
    _common(p)
    _sampling(p)
    p.add_argument("--data", required=True, help="training dataset root")
    p.add_argument("--model", required=True, help="class model JSON from fit-stats")
    _add(p, "C", float, flag="--C")
    _add(p, "tolerance", float)
    _add(p, "max_rounds", int)
    p.add_argument("--log", help="write the per-round training trace CSV here")
    p.add_argument("--out", required=True, help="trained class model JSON")

    p = sub.add_parser("estimate-ground", help="fit the road plane of one scan")
    _common(p)
    _add(p, "ransac_iterations", int)
    _add(p, "ransac_threshold", float)
    p.add_argument("--input", required=True, help="point cloud: .bin (needs --calib) or x,y,z .csv")
    p.add_argument("--calib", help="KITTI calibration file")
    p.add_argument("--classifier", help="ground classifier JSON (default: height-band RANSAC)")
    p.add_argument("--features", help="superpixel features CSV: id,f0..f21 (with --classifier)")
    p.add_argument("--superpixels", help="one superpixel id per point, whitespace separated (with --classifier)")
    p.add_argument("--out", required=True, help="plane file (.json, or KITTI plane .txt)")

    p = sub.add_parser("propose", help="rank 3D proposals for a scan or a directory of scans")
    _common(p)
    _sampling(p)
    p.add_argument("--input", required=True, help=".bin/.csv scan, or a directory of them")
    p.add_argument("--calib", help="calibration file (or directory when --input is a directory)")
    p.add_argument("--model", required=True, help="class model JSON")
    p.add_argument("--plane", help="road plane file or directory (default: estimated)")
    p.add_argument("--format", choices=("csv", "kitti"), help="output format (default: from --out suffix)")
    p.add_argument("--out", required=True, help="output file, or directory when --input is a directory")

    p = sub.add_parser("eval-recall", help="oracle recall of proposal files against labels")
    _common(p)
    p.add_argument("--props", required=True, help="directory of per-scene proposal files (.csv or KITTI .txt)")
    p.add_argument("--gt", required=True, help="directory of KITTI label files")
    _add(p, "class_", flag="--class")
    _add(p, "iou", float)
    _add(p, "space", choices=ev.SPACES)
    _add(p, "difficulty", choices=("easy", "moderate", "hard", "all"))
    _add(p, "budgets")
    p.add_argument("--calib", help="calibration directory (2d space with CSV proposals)")
    p.add_argument("--summary", help="also write an average-recall summary JSON here")
    p.add_argument("--out", required=True, help="recall curve CSV")
    return ap


# ---------------------------------------------------------------------------
# Config handling


def resolve(args: argparse.Namespace) -> dict:
    """Defaults < JSON config < command-line flags."""
    given = {k: v for k, v in vars(args).items()}
    known = set(given)
    cfg = {k: OPTIONS[k][0] for k in known if k in OPTIONS}
    if args.config:
        _need_file(args.config)
        try:
            with open(args.config) as f:
                raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        for k, v in raw.items():
            key = k.replace("-", "_")
            key = "class_" if key == "class" else key
            if key not in known or key in ("command", "config"):
                raise UsageError(f"{args.config}: unknown option {k!r} for {args.command}")
            cfg[key] = v
    for k, v in given.items():
        if v is not None and (k not in cfg or v is not False):
            cfg[k] = v
        cfg.setdefault(k, v)
    return cfg


def _triple(s, name: str) -> tuple:
    vals = s if isinstance(s, (list, tuple)) else str(s).split(",")
    try:
        out = tuple(float(v) for v in vals)
    except ValueError:
        raise UsageError(f"--{name}: expected three comma-separated numbers") from None
    if len(out) != 3:
        raise UsageError(f"--{name}: expected three numbers, got {len(out)}")
    return out


def _pair(s, name: str, type_=float) -> tuple:
    vals = s if isinstance(s, (list, tuple)) else str(s).split(",")
    try:
        out = tuple(type_(v) for v in vals)
    except ValueError:
        raise UsageError(f"--{name}: expected two comma-separated numbers") from None
    if len(out) != 2 or out[0] > out[1]:
        raise UsageError(f"--{name}: expected min,max")
    return out


def _need_file(path, what: str = "file") -> None:
    if path is None or not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")


def _positive(cfg: dict, *names) -> None:
    for n in names:
        if n in cfg and cfg[n] is not None and not cfg[n] > 0:
            raise UsageError(f"--{n.replace('_', '-')} must be positive (got {cfg[n]})")


def validate(cfg: dict) -> None:
    _positive(cfg, "voxel_size", "stride", "k", "margin", "threads", "C", "tolerance", "max_rounds", "epochs", "lr",
              "n", "ransac_iterations", "ransac_threshold", "n_templates", "min_cluster")
    if "delta" in cfg and not 0 < cfg["delta"] <= 1:
        raise UsageError(f"--delta must lie in (0, 1] (got {cfg['delta']})")
    if "iou" in cfg and not 0 < cfg["iou"] <= 1:
        raise UsageError(f"--iou must lie in (0, 1] (got {cfg['iou']})")
    if "far_threshold" in cfg and cfg["far_threshold"] < 0:
        raise UsageError("--far-threshold must be non-negative")
    if "nms" in cfg and cfg["nms"] not in NMS_MODES:
        raise UsageError(f"--nms must be one of {NMS_MODES}")
    if "noise" in cfg and cfg["noise"] < 0:
        raise UsageError("--noise must be non-negative")


def propose_config(cfg: dict, plane: Optional[GroundPlane] = None) -> ProposeConfig:
    lo, hi = _triple(cfg["grid_lo"], "grid-lo"), _triple(cfg["grid_hi"], "grid-hi")
    if any(h <= l for l, h in zip(lo, hi)):
        raise UsageError("--grid-hi must exceed --grid-lo on every axis")
    try:
        grid = GridSpec.from_bounds(lo, hi, float(cfg["voxel_size"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return ProposeConfig(grid=grid, stride=cfg["stride"], delta=float(cfg["delta"]), K=int(cfg["k"]),
                         far_threshold=float(cfg["far_threshold"]), margin=float(cfg["margin"]),
                         nms_mode=cfg["nms"], plane=plane, ransac_iterations=int(cfg["ransac_iterations"]),
                         ransac_threshold=float(cfg["ransac_threshold"]), seed=int(cfg["seed"]))


class Timer:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.t0 = time.perf_counter()

    def lap(self, name: str) -> None:
        t = time.perf_counter()
        if self.enabled:
            print(f"[timing] {name}: {1e3 * (t - self.t0):.1f} ms", file=sys.stderr)
        self.t0 = t

    def report(self, timings: dict, prefix: str = "") -> None:
        if self.enabled:
            for k, v in timings.items():
                if k.endswith("_ms"):
                    print(f"[timing] {prefix}{k[:-3]}: {v:.1f} ms", file=sys.stderr)


def _load_model(path) -> ClassModel:
    _need_file(path, "model")
    try:
        return ClassModel.load(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: not a class model ({exc})") from None


def _load_plane(path) -> GroundPlane:
    _need_file(path, "plane")
    if path.endswith(".json"):
        with open(path) as f:
            return GroundPlane.from_dict(json.load(f))
    return read_plane(path)


def _save_plane(plane: GroundPlane, path) -> None:
    if path.endswith(".json"):
        with open(path, "w") as f:
            json.dump(plane.to_dict(), f, indent=1)
            f.write("\n")
    else:
        write_plane(plane, path)


def _load_cloud(path, calib: Optional[kitti.KittiCalib]):
    _need_file(path, "point cloud")
    if path.endswith(".csv"):
        return depth.read_cloud_csv(path)
    if calib is None:
        raise UsageError(f"{path}: a .bin scan needs --calib")
    return kitti.read_velodyne(path, calib)


# ---------------------------------------------------------------------------
# Commands


def cmd_synth_gen(cfg: dict, timer: Timer) -> None:
    out = cfg["out"]
    lo_n, hi_n = _pair(cfg["n_objects"], "n-objects", int)
    dist = _pair(cfg["distance"], "distance")
    for d in ("velodyne", "label_2", "calib", "planes"):
        os.makedirs(os.path.join(out, d), exist_ok=True)
    for i in range(int(cfg["n"])):
        seed = int(cfg["seed"]) + i
        kw = dict(n_objects=(lo_n, hi_n), distance=dist, noise=float(cfg["noise"]))
        spec = SyntheticSceneSpec.kitti_scale(seed, **kw) if cfg["preset"] == "kitti" else \
            SyntheticSceneSpec(seed=seed, **kw)
        scene = generate_synthetic_scene(spec)
        kc = kitti.KittiCalib(scene.calib, np.eye(3), SYNTH_TR_VELO_TO_CAM)
        sid = f"{i:06d}"
        kitti.write_calib(kc, os.path.join(out, "calib", sid + ".txt"))
        kitti.write_velodyne(os.path.join(out, "velodyne", sid + ".bin"), kc.cam_to_velo(scene.cloud.points))
        write_plane(scene.plane, os.path.join(out, "planes", sid + ".txt"))
        labels = [kitti.box_to_label(b, name.capitalize(), scene.calib, trunc, occ)
                  for b, name, occ, trunc in zip(scene.boxes, scene.class_names, scene.occlusion_levels(),
                                                 scene.truncations())]
        kitti.write_labels(labels, os.path.join(out, "label_2", sid + ".txt"))
    timer.lap("synth-gen")
    print(f"wrote {cfg['n']} scenes to {out}")


def _labelled_scenes(root: str, with_cloud: bool):
    _need_file(root, "dataset root")
    if not os.path.isdir(os.path.join(root, "label_2")):
        raise UsageError(f"{root}: no label_2/ directory")
    return iter_scenes(root, with_cloud)


def cmd_fit_templates(cfg: dict, timer: Timer) -> None:
    from .learning import fit_templates

    sizes = [b.size for sc in _labelled_scenes(cfg["data"], False) for b in sc.gt_boxes(cfg["class_"])]
    if not sizes:
        raise RuntimeError(f"no {cfg['class_']!r} labels under {cfg['data']}")
    tpl = fit_templates(np.array(sizes), min_cluster=int(cfg["min_cluster"]), max_templates=int(cfg["n_templates"]))
    with open(cfg["out"], "w") as f:
        json.dump({"class": cfg["class_"], "n_boxes": len(sizes), "templates": [list(t) for t in tpl]}, f, indent=1)
        f.write("\n")
    timer.lap("fit-templates")
    print(f"{len(tpl)} templates from {len(sizes)} boxes")


def cmd_fit_stats(cfg: dict, timer: Timer) -> None:
    templates = None
    if cfg["templates"]:
        _need_file(cfg["templates"], "templates")
        with open(cfg["templates"]) as f:
            templates = json.load(f)["templates"]
    pcfg = propose_config(cfg)
    root = cfg["data"]
    need_cloud = not os.path.isdir(os.path.join(root, "planes"))
    model = fit_class_model(_labelled_scenes(root, need_cloud), cfg["class_"], templates,
                            int(cfg["min_cluster"]), pcfg)
    model.save(cfg["out"])
    timer.lap("fit-stats")
    print(f"mu_ht={model.mu_ht:.4f} sigma_ht={model.sigma_ht:.4f} sigma_road={model.sigma_road:.4f} "
          f"templates={len(model.templates)}")


def cmd_train_ground(cfg: dict, timer: Timer) -> None:
    _need_file(cfg["features"], "features")
    with open(cfg["features"], newline="") as f:
        rows = list(csv.DictReader(f))
    cols = [f"f{i}" for i in range(N_FEATURES)]
    if not rows or any(c not in rows[0] for c in cols + ["ground"]):
        raise UsageError(f"{cfg['features']}: need columns f0..f{N_FEATURES - 1} and ground")
    X = np.array([[float(r[c]) for c in cols] for r in rows])
    y = np.array([float(r["ground"]) for r in rows])
    clf = train_ground_classifier(X, y, int(cfg["epochs"]), float(cfg["lr"]), int(cfg["seed"]))
    clf.save(cfg["out"])
    timer.lap("train-ground")
    print(f"loss {clf.meta['initial_loss']:.4f} -> {clf.meta['final_loss']:.4f}")


def cmd_train_weights(cfg: dict, timer: Timer) -> None:
    model = _load_model(cfg["model"])
    pcfg = propose_config(cfg)
    ssvm = SsvmConfig(C=float(cfg["C"]), tolerance=float(cfg["tolerance"]), max_iterations=int(cfg["max_rounds"]))
    trained, res = train_weights(_labelled_scenes(cfg["data"], True), model, ssvm, pcfg)
    trained.save(cfg["out"])
    if cfg["log"]:
        res.write_log(cfg["log"])
    timer.lap("train-weights")
    w = ", ".join(f"{v:.6g}" for v in trained.weights)
    print(f"w = [{w}] after {res.rounds} rounds (converged: {res.converged})")


def cmd_estimate_ground(cfg: dict, timer: Timer) -> None:
    calib = kitti.read_calib(cfg["calib"]) if cfg["calib"] else None
    if cfg["calib"]:
        _need_file(cfg["calib"], "calibration")
    cloud = _load_cloud(cfg["input"], calib)
    kw = dict(iterations=int(cfg["ransac_iterations"]), inlier_threshold=float(cfg["ransac_threshold"]),
              seed=int(cfg["seed"]))
    if cfg["classifier"]:
        for k in ("classifier", "features", "superpixels"):
            _need_file(cfg[k], k)
        clf = GroundClassifier.load(cfg["classifier"])
        tab = np.loadtxt(cfg["features"], delimiter=",", skiprows=1, ndmin=2)
        feats = SuperpixelFeatures(tab[:, 0].astype(np.int64), tab[:, 1:], np.zeros(tab.shape[0], bool))
        labels = np.loadtxt(cfg["superpixels"], dtype=np.int64, ndmin=1)
        if labels.shape[0] != len(cloud):
            raise UsageError(f"{cfg['superpixels']}: {labels.shape[0]} labels for {len(cloud)} points")
        plane = estimate_ground(cloud, clf, feats, labels, **kw)
    else:
        plane = estimate_ground_direct(cloud, **kw)
    _save_plane(plane, cfg["out"])
    timer.lap("estimate-ground")
    print(f"normal=({plane.normal[0]:.5f}, {plane.normal[1]:.5f}, {plane.normal[2]:.5f}) offset={plane.offset:.4f} "
          f"inliers={plane.inliers}")


def _propose_one(cfg, model, scan, calib_path, plane_path, out, fmt, timer: Timer, prefix=""):
    kc = None
    if calib_path:
        _need_file(calib_path, "calibration")
        kc = kitti.read_calib(calib_path)
    cloud = _load_cloud(scan, kc)
    plane = _load_plane(plane_path) if plane_path else None
    pcfg = propose_config(cfg, plane)
    if pcfg.nms_mode == "image" and kc is None:
        raise UsageError("image-plane NMS needs --calib (or use --nms bev)")
    props = propose(cloud, kc.camera if kc else None, model, pcfg)
    timer.report(props.timings, prefix)
    if fmt == "kitti":
        write_proposals_kitti(props, out, kc.camera if kc else None)
    else:
        write_proposals_csv(props, out)
    return len(props)


def cmd_propose(cfg: dict, timer: Timer) -> None:
    model = _load_model(cfg["model"])
    src, out = cfg["input"], cfg["out"]
    _need_file(src, "input")
    if not os.path.isdir(src):
        fmt = cfg["format"] or ("kitti" if out.endswith(".txt") else "csv")
        n = _propose_one(cfg, model, src, cfg["calib"], cfg["plane"], out, fmt, timer)
        print(f"{n} proposals -> {out}")
        return
    fmt = cfg["format"] or "csv"
    scans = sorted(glob.glob(os.path.join(src, "*.bin")) + glob.glob(os.path.join(src, "*.csv")))
    if not scans:
        raise UsageError(f"{src}: no .bin or .csv scans")
    os.makedirs(out, exist_ok=True)
    for scan in scans:
        sid = os.path.splitext(os.path.basename(scan))[0]
        calib = os.path.join(cfg["calib"], sid + ".txt") if cfg["calib"] else None
        plane = None
        if cfg["plane"]:
            cands = [os.path.join(cfg["plane"], sid + e) for e in (".txt", ".json")]
            plane = next((c for c in cands if os.path.exists(c)), None)
        dst = os.path.join(out, sid + (".txt" if fmt == "kitti" else ".csv"))
        _propose_one(cfg, model, scan, calib, plane, dst, fmt, timer, f"{sid} ")
    print(f"{len(scans)} scenes -> {out}")


def _read_props(path, calib_dir: Optional[str], space: str) -> ev.SceneProposals:
    if path.endswith(".csv"):
        boxes, _, _ = read_proposals_csv(path)
        rects = None
        if space == "2d":
            if not calib_dir:
                raise UsageError("2d recall from CSV proposals needs --calib")
            cpath = os.path.join(calib_dir, os.path.splitext(os.path.basename(path))[0] + ".txt")
            _need_file(cpath, "calibration")
            rects = project_boxes(boxes, kitti.read_calib(cpath).camera)
        return ev.SceneProposals(boxes, rects)
    labs = kitti.read_labels(path)
    if any(lab.score is None for lab in labs):
        raise UsageError(f"{path}: KITTI proposals need a score column")
    labs = sorted(labs, key=lambda lab: -lab.score)
    return ev.SceneProposals(np.array([lab.to_box().as_array() for lab in labs]).reshape(-1, 7),
                             np.array([lab.bbox for lab in labs]).reshape(-1, 4))


def cmd_eval_recall(cfg: dict, timer: Timer) -> None:
    for k in ("props", "gt"):
        if not os.path.isdir(cfg[k] or ""):
            raise UsageError(f"--{k}: not a directory: {cfg[k]}")
    try:
        budgets = sorted({int(b) for b in str(cfg["budgets"]).split(",")})
    except ValueError:
        raise UsageError("--budgets: expected comma-separated integers") from None
    if budgets[0] < 1:
        raise UsageError("--budgets must be positive")
    scenes = []
    for lp in sorted(glob.glob(os.path.join(cfg["gt"], "*.txt"))):
        sid = os.path.splitext(os.path.basename(lp))[0]
        cands = [os.path.join(cfg["props"], sid + e) for e in (".csv", ".txt")]
        pp = next((c for c in cands if os.path.exists(c)), None)
        if pp is None:
            raise UsageError(f"no proposal file for scene {sid} in {cfg['props']}")
        gts = [label_to_gt(lab) for lab in kitti.read_labels(lp) if not lab.is_dont_care]
        scenes.append((_read_props(pp, cfg["calib"], cfg["space"]), gts))
    if not scenes:
        raise UsageError(f"{cfg['gt']}: no label files")
    diff = None if cfg["difficulty"] == "all" else cfg["difficulty"]
    curve = ev.recall_vs_budget(scenes, float(cfg["iou"]), budgets, cfg["space"], cfg["class_"], diff)
    curve.write_csv(cfg["out"])
    if cfg["summary"]:
        sb = tuple(b for b in ev.SUMMARY_BUDGETS if b <= budgets[-1]) or (budgets[-1],)
        ev.write_summary(ev.summary(scenes, cfg["space"], cfg["class_"], diff, float(cfg["iou"]), sb), cfg["summary"])
    timer.lap("eval-recall")
    for b, r in curve.points:
        print(f"recall@{b} = {'n/a' if r is None else f'{r:.4f}'}")


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "fit-templates": cmd_fit_templates,
    "fit-stats": cmd_fit_stats,
    "train-ground": cmd_train_ground,
    "train-weights": cmd_train_weights,
    "estimate-ground": cmd_estimate_ground,
    "propose": cmd_propose,
    "eval-recall": cmd_eval_recall,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        validate(cfg)
        COMMANDS[args.command](cfg, Timer(bool(cfg.get("timing"))))
    except UsageError as exc:
        print(f"prop3d {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        log.debug("failure", exc_info=True)
        print(f"prop3d {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
