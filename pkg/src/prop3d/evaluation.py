"""Oracle recall, average recall, recall by distance, and average localization precision."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import OrientedBox3D, bev_rects, iou_2d_matrix, iou_3d_many

SPACES = ("2d", "bev", "3d")
AR_THRESHOLDS = {
    "2d": tuple(np.round(np.arange(0.5, 0.951, 0.05), 2)),
    "bev": tuple(np.round(np.arange(0.5, 0.951, 0.05), 2)),
    "3d": tuple(np.round(np.arange(0.25, 0.501, 0.05), 2)),
}
SUMMARY_BUDGETS = (100, 500, 1000, 2000)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class DifficultyFilter:
    name: str
    min_height: float
    max_occlusion: int
    max_truncation: float

    def accepts(self, gt: "GTObject") -> bool:
        return (gt.height_px >= self.min_height and gt.occlusion <= self.max_occlusion
                and gt.truncation <= self.max_truncation)


DIFFICULTIES = {
    "easy": DifficultyFilter("easy", 40.0, 0, 0.15),
    "moderate": DifficultyFilter("moderate", 25.0, 1, 0.30),
    "hard": DifficultyFilter("hard", 25.0, 2, 0.50),
}


@dataclass(frozen=True)
class GTObject:
    box: OrientedBox3D
    rect: Optional[tuple] = None
    class_name: str = "car"
    occlusion: int = 0
    truncation: float = 0.0

    @property
    def height_px(self) -> float:
        if self.rect is None:
            return float("inf")
        return self.rect[3] - self.rect[1]


@dataclass
class SceneProposals:
    """Ranked proposals of one scene: (N, 7) boxes and optional (N, 4) image rects."""

    boxes: np.ndarray
    rects: Optional[np.ndarray] = None

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 7)
        if self.rects is not None:
            self.rects = np.asarray(self.rects, dtype=np.float64).reshape(-1, 4)


@dataclass
class RecallCurve:
    axis: str
    points: list
    class_name: str = "car"
    difficulty: str = "moderate"
    iou_space: str = "3d"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow([self.axis, "recall"])
            for x, r in self.points:
                w.writerow([x, "" if r is None else repr(float(r))])

    @property
    def filename(self) -> str:
        return f"recall_{self.class_name}_{self.difficulty}_{self.iou_space}.csv"


def select_gt(gts: Sequence[GTObject], class_name: Optional[str] = None,
              difficulty: Optional[str] = None) -> list:
    flt = DIFFICULTIES[difficulty] if difficulty else None
    out = []
    for g in gts:
        if class_name and g.class_name.lower() != class_name.lower():
            continue
        if flt is not None and not flt.accepts(g):
            continue
        out.append(g)
    return out


def pair_ious(gts: Sequence[GTObject], props: SceneProposals, space: str, budget: int) -> np.ndarray:
    """(n_gt, min(budget, n_props)) IoU matrix in the requested space."""
    if space not in SPACES:
        raise EvaluationError(f"unknown IoU space {space!r}")
    n = min(budget, props.boxes.shape[0])
    if not gts or n == 0:
        return np.zeros((len(gts), n))
    if space == "3d":
        return np.stack([iou_3d_many(g.box, props.boxes[:n]) for g in gts])
    if space == "bev":
        g = bev_rects(np.array([g.box.as_array() for g in gts]))
        return iou_2d_matrix(g, bev_rects(props.boxes[:n]))
    if props.rects is None or any(g.rect is None for g in gts):
        raise EvaluationError("image-space recall needs proposal rects and GT 2D boxes")
    return iou_2d_matrix(np.array([g.rect for g in gts]), props.rects[:n])


def best_iou_by_budget(scenes, space: str, max_budget: int, class_name=None, difficulty=None) -> np.ndarray:
    """Per GT object, the best IoU reached within the first b proposals, for b = 1..max_budget."""
    rows = []
    for props, gts in scenes:
        sel = select_gt(gts, class_name, difficulty)
        if not sel:
            continue
        iou = pair_ious(sel, props, space, max_budget)
        cum = np.zeros((len(sel), max_budget))
        if iou.shape[1]:
            run = np.maximum.accumulate(iou, axis=1)
            cum[:, :iou.shape[1]] = run
            cum[:, iou.shape[1]:] = run[:, -1:]
        rows.append(cum)
    if not rows:
        return np.zeros((0, max_budget))
    return np.vstack(rows)


def oracle_recall(scenes, threshold: float, budget: int, space: str = "3d", class_name=None,
                  difficulty=None) -> Optional[float]:
    """Fraction of GT objects hit by one of the top ``budget`` proposals at IoU >= ``threshold``.

    ``scenes`` is a sequence of (SceneProposals, [GTObject]). None when no GT survives filtering.
    """
    if budget < 1:
        raise EvaluationError("budget must be at least 1")
    best = best_iou_by_budget(scenes, space, budget, class_name, difficulty)
    if best.shape[0] == 0:
        return None
    return float(np.mean(best[:, budget - 1] >= threshold))


def average_recall(scenes, budget: int, space: str = "3d", thresholds=None, class_name=None,
                   difficulty=None) -> Optional[float]:
    thresholds = AR_THRESHOLDS[space] if thresholds is None else thresholds
    best = best_iou_by_budget(scenes, space, budget, class_name, difficulty)
    if best.shape[0] == 0:
        return None
    col = best[:, budget - 1]
    return float(np.mean([np.mean(col >= t) for t in thresholds]))


def recall_vs_budget(scenes, threshold: float, budgets, space: str = "3d", class_name="car",
                     difficulty=None) -> RecallCurve:
    budgets = [int(b) for b in budgets]
    best = best_iou_by_budget(scenes, space, max(budgets), class_name, difficulty)
    pts = [(b, None if best.shape[0] == 0 else float(np.mean(best[:, b - 1] >= threshold))) for b in budgets]
    return RecallCurve("budget", pts, class_name or "all", difficulty or "all", space)


def recall_vs_iou(scenes, thresholds, budget: int, space: str = "3d", class_name="car",
                  difficulty=None) -> RecallCurve:
    best = best_iou_by_budget(scenes, space, budget, class_name, difficulty)
    pts = [(float(t), None if best.shape[0] == 0 else float(np.mean(best[:, budget - 1] >= t)))
           for t in thresholds]
    return RecallCurve("iou", pts, class_name or "all", difficulty or "all", space)


def recall_vs_distance(scenes, threshold: float, budget: int, bins, space: str = "3d", class_name=None,
                       difficulty=None) -> RecallCurve:
    """Recall per bucket of GT ground distance sqrt(x^2 + z^2); ``bins`` are bucket edges in meters."""
    edges = np.asarray(bins, dtype=np.float64)
    hits, dist = [], []
    for props, gts in scenes:
        sel = select_gt(gts, class_name, difficulty)
        if not sel:
            continue
        iou = pair_ious(sel, props, space, budget)
        hit = iou.max(axis=1) >= threshold if iou.shape[1] else np.zeros(len(sel), bool)
        hits.append(hit)
        dist.append([np.hypot(g.box.center[0], g.box.center[2]) for g in sel])
    hits = np.concatenate(hits) if hits else np.zeros(0, bool)
    dist = np.concatenate(dist) if dist else np.zeros(0)
    pts = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (dist >= lo) & (dist < hi)
        pts.append((float(0.5 * (lo + hi)), float(hits[m].mean()) if m.any() else None))
    return RecallCurve("distance", pts, class_name or "all", difficulty or "all", space)


# ---------------------------------------------------------------------------
# Localization precision


def _match_scene(centers, scores, gt_centers, threshold):
    """Greedy by descending score (stable): nearest unmatched GT within ``threshold`` counts as a hit."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    used = np.zeros(len(gt_centers), dtype=bool)
    tp = np.zeros(len(scores), dtype=bool)
    gt_centers = np.asarray(gt_centers, dtype=np.float64).reshape(-1, 3)
    for i in order:
        if not len(gt_centers):
            break
        d = np.linalg.norm(gt_centers - centers[i], axis=1)
        d[used] = np.inf
        j = int(np.argmin(d))
        if d[j] < threshold:
            used[j] = True
            tp[i] = True
    return tp


def interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the precision envelope (all-point interpolation)."""
    r = np.concatenate([[0.0], recall, [recall[-1] if recall.size else 0.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    p = np.maximum.accumulate(p[::-1])[::-1]
    idx = np.flatnonzero(r[1:] != r[:-1])
    return float(np.sum((r[idx + 1] - r[idx]) * p[idx + 1]))


def alp(detections, gt, distance_threshold: float = 1.0) -> Optional[float]:
    """Average localization precision over scenes.

    ``detections``: per scene (centers (N, 3), scores (N,)), higher score first.
    ``gt``: per scene (M, 3) centers. A detection is correct when its center lies
    within ``distance_threshold`` meters of a not-yet-matched GT center.
    The P-R curve is sampled once per distinct score, so ties do not depend on order.
    """
    n_gt = sum(len(np.asarray(g).reshape(-1, 3)) for g in gt)
    if n_gt == 0:
        return None
    all_scores, all_tp = [], []
    for (centers, scores), g in zip(detections, gt):
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        all_tp.append(_match_scene(centers, scores, g, distance_threshold))
        all_scores.append(scores)
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    tp = np.concatenate(all_tp) if all_tp else np.zeros(0, bool)
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    scores, tp = scores[order], tp[order]
    ctp = np.cumsum(tp)
    last = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    tps = ctp[last].astype(np.float64)
    precision = tps / (last + 1)
    recall = tps / n_gt
    return interpolated_ap(recall, precision)


# ---------------------------------------------------------------------------
# Outputs


def summary(scenes, space: str, class_name: str, difficulty: Optional[str], threshold: float,
            budgets=SUMMARY_BUDGETS) -> dict:
    max_b = max(budgets)
    out = {"class": class_name, "difficulty": difficulty or "all", "space": space, "iou": threshold,
           "AR": average_recall(scenes, max_b, space, class_name=class_name, difficulty=difficulty)}
    for b in budgets:
        out[f"recall@{b}"] = oracle_recall(scenes, threshold, b, space, class_name, difficulty)
    return out


def write_summary(d: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(d, f, indent=1)
        f.write("\n")
