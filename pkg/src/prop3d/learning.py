"""Learning: size templates, height statistics, and structured-SVM potential weights."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .energy import ClassModel, SceneGrids, potentials_array
from .geometry import OrientedBox3D, iou_3d_many
from .ground import GroundPlane
from .voxels import GridSpec

log = logging.getLogger(__name__)

TEMPLATE_IOU = 0.6
TEMPLATE_BIN = 0.1
MAX_TEMPLATES = 3
OTHER_GT_IOU = 0.25
RESIDUAL_TOL = 1e-9


class LearningError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Templates


def centered_iou(a, b) -> np.ndarray:
    """IoU of axis-aligned boxes sharing a center; ``a`` is (3,), ``b`` is (N, 3)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    inter = np.prod(np.minimum(a[None, :], b), axis=1)
    return inter / (np.prod(a) + np.prod(b, axis=1) - inter)


def fit_templates(sizes, min_cluster: int = 1, bin_width: float = TEMPLATE_BIN,
                  max_templates: int = MAX_TEMPLATES, iou_threshold: float = TEMPLATE_IOU) -> list:
    """Iterative mode clustering of (sx, sy, sz) sizes.

    Each round histograms the remaining sizes, anchors on the mean of the most
    populated bin, takes every size whose centered IoU with the anchor exceeds
    ``iou_threshold`` as one cluster, and emits that cluster's mean size.
    """
    S = np.asarray(sizes, dtype=np.float64).reshape(-1, 3)
    if S.shape[0] == 0:
        raise LearningError("no sizes to cluster")
    if np.any(S <= 0):
        raise LearningError("sizes must be positive")
    # canonical order makes the result independent of input order
    S = S[np.lexsort(S.T[::-1])]
    templates = []
    while S.shape[0] >= min_cluster and S.shape[0] > 0 and len(templates) < max_templates:
        bins = np.floor(S / bin_width + 1e-9).astype(np.int64)
        uniq, inverse, counts = np.unique(bins, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        mode = int(np.argmax(counts))  # ties: lexicographically smallest bin
        in_mode = inverse == mode
        anchor = S[in_mode].mean(axis=0)
        member = (centered_iou(anchor, S) > iou_threshold) | in_mode
        if member.sum() < min_cluster:
            break
        templates.append(tuple(float(v) for v in S[member].mean(axis=0)))
        S = S[~member]
    return templates


# ---------------------------------------------------------------------------
# Height statistics


def _mle(values) -> tuple:
    v = np.asarray(values, dtype=np.float64)
    mu = v.sum() / v.size
    sigma = math.sqrt(float(((v - mu) ** 2).sum() / v.size))
    return float(mu), sigma


def box_center_heights(boxes, plane: GroundPlane) -> np.ndarray:
    return plane.height_above(np.array([b.center for b in boxes]))


def box_bottom_heights(boxes, plane: GroundPlane) -> np.ndarray:
    bottoms = np.array([(b.center[0], b.center[1] + 0.5 * b.size[1], b.center[2]) for b in boxes])
    return plane.height_above(bottoms)


def fit_height_stats(gt_boxes: Sequence[OrientedBox3D], plane: GroundPlane) -> tuple:
    """MLE (mean, std) of object-center height above the road."""
    if len(gt_boxes) < 2:
        raise LearningError("height statistics need at least two boxes")
    return _mle(box_center_heights(gt_boxes, plane))


def fit_road_sigma(gt_boxes: Sequence[OrientedBox3D], plane: GroundPlane) -> float:
    """MLE std of the box-bottom distance from the road plane."""
    if len(gt_boxes) < 2:
        raise LearningError("road sigma needs at least two boxes")
    return _mle(box_bottom_heights(gt_boxes, plane))[1]


# ---------------------------------------------------------------------------
# Structured SVM


@dataclass
class TrainingPair:
    """One ground-truth object against the candidate boxes of its scene."""

    scene_id: str
    gt: OrientedBox3D
    gt_phi: np.ndarray
    cand_boxes: np.ndarray
    cand_phi: np.ndarray
    loss: np.ndarray

    def __post_init__(self):
        self.gt_phi = np.asarray(self.gt_phi, dtype=np.float64).reshape(4)
        self.cand_phi = np.asarray(self.cand_phi, dtype=np.float64).reshape(-1, 4)
        self.loss = np.asarray(self.loss, dtype=np.float64).reshape(-1)


@dataclass
class TrainingScene:
    scene_id: str
    gt_boxes: list
    plane: Optional[GroundPlane]
    cand_boxes: np.ndarray
    cand_phi: np.ndarray
    gt_phi: np.ndarray

    def pairs(self, other_gt_iou: float = OTHER_GT_IOU) -> list:
        """One pair per GT; candidates overlapping a different GT at ``other_gt_iou`` are left out."""
        out = []
        ious = np.stack([iou_3d_many(g, self.cand_boxes) for g in self.gt_boxes]) if self.gt_boxes else None
        for i, g in enumerate(self.gt_boxes):
            keep = np.ones(self.cand_boxes.shape[0], dtype=bool)
            for j in range(len(self.gt_boxes)):
                if j != i:
                    keep &= ious[j] < other_gt_iou
            out.append(TrainingPair(self.scene_id, g, self.gt_phi[i], self.cand_boxes[keep],
                                    self.cand_phi[keep], 1.0 - ious[i][keep]))
        return out


def snap_to_grid(b: OrientedBox3D, spec: GridSpec, stride: Optional[float] = None) -> OrientedBox3D:
    """Nearest sampler-style box: center x/z on the sampling lattice, azimuth in {0, 90} degrees."""
    h = spec.voxel_size if stride is None else stride
    x = spec.origin[0] + (math.floor((b.center[0] - spec.origin[0]) / h) + 0.5) * h
    z = spec.origin[2] + (math.floor((b.center[2] - spec.origin[2]) / h) + 0.5) * h
    quarter = int(round(b.azimuth / (0.5 * math.pi))) % 2
    return OrientedBox3D((x, b.center[1], z), b.size, quarter * 0.5 * math.pi, b.class_id, b.template_id)


def scene_for_training(scene_id: str, grids: SceneGrids, model: ClassModel, gt_boxes, cand_boxes: np.ndarray,
                       cand_phi: Optional[np.ndarray] = None, plane: Optional[GroundPlane] = None,
                       stride: Optional[float] = None) -> TrainingScene:
    snapped = np.array([snap_to_grid(g, grids.spec, stride).as_array() for g in gt_boxes]).reshape(-1, 7)
    gt_phi = potentials_array(grids, snapped, model)
    if cand_phi is None:
        cand_phi = potentials_array(grids, cand_boxes, model)
    return TrainingScene(scene_id, list(gt_boxes), plane, np.asarray(cand_boxes), cand_phi, gt_phi)


def loss_augmented_inference(pair: TrainingPair, w) -> tuple:
    """Exhaustive argmax over candidates of loss - w.(phi(y) - phi(gt)).

    Returns (candidate index, box, value); a positive value is a violated margin.
    """
    if pair.cand_phi.shape[0] == 0:
        raise LearningError(f"scene {pair.scene_id}: empty candidate set")
    w = np.asarray(w, dtype=np.float64)
    scores = pair.loss - (pair.cand_phi - pair.gt_phi) @ w
    k = int(np.argmax(scores))
    return k, OrientedBox3D.from_array(pair.cand_boxes[k]), float(scores[k])


@dataclass
class SsvmConfig:
    C: float = 1.0
    tolerance: float = 1e-3
    max_iterations: int = 100
    qp_tolerance: float = 1e-10
    qp_max_iterations: int = 100

    def __post_init__(self):
        if not self.C > 0:
            raise LearningError("C must be positive")
        if not self.tolerance > 0:
            raise LearningError("tolerance must be positive")


@dataclass
class SsvmResult:
    w: np.ndarray
    converged: bool
    rounds: int
    xi: np.ndarray
    trace: list = field(default_factory=list)
    working_set: list = field(default_factory=list)

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(["round", "objective", "max_violation", "working_set_size"])
            for row in self.trace:
                wr.writerow([row["round"], repr(row["objective"]), repr(row["max_violation"]), row["working_set_size"]])


class WorkingSetQP:
    """The n-slack QP restricted to the working set.

    primal:  min_w,xi  1/2 |w|^2 + (C/N) sum_i xi_i
             s.t.      psi_k . w >= L_k - xi_{b(k)},  xi >= 0
    dual:    max_a     sum_k a_k L_k - 1/2 |sum_k a_k psi_k|^2
             s.t.      a >= 0,  sum_{k in block i} a_k <= C / N

    Solved with a primal-dual interior-point method; the slack variables are
    eliminated through a diagonal Schur complement, so each Newton step costs
    O(K d^2) for K working-set rows in d feature dimensions.
    """

    def __init__(self, n_blocks: int, C: float, dim: int = 4):
        self.budget = C / n_blocks
        self.C = C
        self.n = n_blocks
        self.dim = dim
        self.psi = np.zeros((0, dim))
        self.L = np.zeros(0)
        self.block = np.zeros(0, dtype=np.int64)
        self.alpha = np.zeros(0)
        self.w = np.zeros(dim)
        self.iterations = 0

    def add(self, block: int, psi, loss: float) -> None:
        self.psi = np.vstack([self.psi, np.asarray(psi, dtype=np.float64).reshape(1, self.dim)])
        self.L = np.append(self.L, float(loss))
        self.block = np.append(self.block, int(block))
        self.alpha = np.append(self.alpha, 0.0)

    @property
    def size(self) -> int:
        return self.L.size

    def dual(self) -> float:
        return float(self.alpha @ self.L) - 0.5 * float(self.w @ self.w)

    def slacks(self, w=None) -> np.ndarray:
        w = self.w if w is None else w
        xi = np.zeros(self.n)
        if self.size:
            np.maximum.at(xi, self.block, self.L - self.psi @ w)
        return xi

    def primal(self) -> float:
        return 0.5 * float(self.w @ self.w) + self.budget * float(self.slacks().sum())

    # G z for z = (w, xi): working-set rows -psi_k.w - xi_b(k), then one -xi_i row per block
    def _G(self, w, xi):
        return np.concatenate([-(self.psi @ w) - xi[self.block], -xi])

    def _GT(self, v):
        K = self.size
        gw = -(v[:K] @ self.psi)
        gxi = -v[K:] - np.bincount(self.block, weights=v[:K], minlength=self.n)
        return gw, gxi

    def _newton(self, D, rw, rxi):
        K = self.size
        Dk, Dx = D[:K], D[K:]
        PD = self.psi * Dk[:, None]
        A = np.eye(self.dim) + self.psi.T @ PD
        Bm = np.zeros((self.dim, self.n))
        np.add.at(Bm.T, self.block, PD)
        delta = np.bincount(self.block, weights=Dk, minlength=self.n) + Dx
        S = A - (Bm / delta) @ Bm.T
        dw = np.linalg.solve(S, rw - Bm @ (rxi / delta))
        dxi = (rxi - Bm.T @ dw) / delta
        return dw, dxi

    def solve(self, tol: float = 1e-10, max_iterations: int = 100) -> None:
        K, n = self.size, self.n
        if K == 0:
            self.alpha = np.zeros(0)
            self.w = np.zeros(self.dim)
            return
        m = K + n
        h = np.concatenate([-self.L, np.zeros(n)])
        w = np.zeros(self.dim)
        xi = np.zeros(n)
        np.maximum.at(xi, self.block, self.L)
        xi += 1.0
        s = np.maximum(h - self._G(w, xi), 1.0)
        lam = np.ones(m)
        psi_max = float(np.abs(self.psi).max())

        def step_to_boundary(v, dv):
            neg = dv < 0
            return min(1.0, float(np.min(-v[neg] / dv[neg]))) if neg.any() else 1.0

        for it in range(1, max_iterations + 1):
            gw, gxi = self._GT(lam)
            rdw = w + gw
            rdxi = self.budget + gxi
            rp = self._G(w, xi) + s - h
            gap = float(lam @ s)
            mu = gap / m
            obj = 0.5 * float(w @ w) + self.budget * float(xi.sum())
            self.iterations = it
            # residual floors scale with the magnitude of the terms that cancel in them
            lam_sum = float(lam[:K].sum())
            rtol = RESIDUAL_TOL * (1.0 + psi_max * lam_sum + float(np.abs(w).max()))
            ptol = RESIDUAL_TOL * (1.0 + psi_max * float(np.abs(w).max()) + float(np.abs(xi).max())
                                   + float(np.abs(self.L).max()))
            if (np.abs(rdw).max() <= rtol and np.abs(rdxi).max() <= RESIDUAL_TOL * (1.0 + lam_sum)
                    and np.abs(rp).max() <= ptol and gap <= tol * max(1.0, abs(obj))):
                break
            D = lam / s

            def direction(rc):
                v = D * rp - rc / s
                vw, vxi = self._GT(v)
                dw, dxi = self._newton(D, -rdw - vw, -rdxi - vxi)
                dlam = D * (self._G(dw, dxi) + rp) - rc / s
                ds = (-rc - s * dlam) / lam
                return dw, dxi, dlam, ds

            rc = lam * s
            _, _, dlam_a, ds_a = direction(rc)
            a = min(step_to_boundary(lam, dlam_a), step_to_boundary(s, ds_a))
            mu_aff = float((lam + a * dlam_a) @ (s + a * ds_a)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dw, dxi, dlam, ds = direction(rc + dlam_a * ds_a - sigma * mu)
            a = 0.99 * min(step_to_boundary(lam, dlam), step_to_boundary(s, ds))
            a = min(a, 1.0)
            if a < 1e-12:
                log.warning("working-set QP stalled at iteration %d (duality gap %.3g)", it, gap)
                break
            w += a * dw
            xi += a * dxi
            lam += a * dlam
            s += a * ds
        self.alpha = lam[:K].copy()
        self.w = self.alpha @ self.psi


def train_ssvm(pairs: Sequence[TrainingPair], cfg: Optional[SsvmConfig] = None) -> SsvmResult:
    """n-slack cutting-plane training: add each pair's most violated candidate, re-solve, repeat."""
    cfg = cfg or SsvmConfig()
    pairs = list(pairs)
    if not pairs:
        raise LearningError("no training pairs")
    n = len(pairs)
    qp = WorkingSetQP(n, cfg.C)
    in_set = [set() for _ in range(n)]
    trace = []
    converged = False
    rounds = 0
    for rounds in range(1, cfg.max_iterations + 1):
        xi = qp.slacks()
        added = 0
        max_violation = 0.0
        for i, p in enumerate(pairs):
            k, _, value = loss_augmented_inference(p, qp.w)
            viol = value - xi[i]
            max_violation = max(max_violation, viol)
            if viol > cfg.tolerance and k not in in_set[i]:
                in_set[i].add(k)
                qp.add(i, p.cand_phi[k] - p.gt_phi, p.loss[k])
                added += 1
        if added == 0:
            converged = True
            trace.append({"round": rounds, "objective": qp.dual(), "max_violation": max_violation,
                          "working_set_size": qp.size})
            break
        qp.solve(cfg.qp_tolerance, cfg.qp_max_iterations)
        trace.append({"round": rounds, "objective": qp.dual(), "max_violation": max_violation,
                      "working_set_size": qp.size})
    if not converged:
        log.warning("structured SVM stopped after %d rounds without convergence", rounds)
    return SsvmResult(qp.w.copy(), converged, rounds, qp.slacks(), trace, [sorted(k) for k in in_set])


def max_violations(pairs: Sequence[TrainingPair], w, xi) -> np.ndarray:
    """Per pair: max over all candidates of loss - w.psi - xi (exhaustive post-hoc check)."""
    out = np.zeros(len(pairs))
    for i, p in enumerate(pairs):
        _, _, value = loss_augmented_inference(p, w)
        out[i] = value - xi[i]
    return out
