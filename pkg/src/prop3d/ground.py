"""Road-plane estimation: superpixel features, a tiny tanh classifier, and RANSAC plane fitting."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraCalib, PointCloud

N_FEATURES = 22
N_HIDDEN = 22
GROUND_CUTOFF = 0.5
DIRECT_BAND = (1.0, 2.2)

# feature layout
FEATURE_NAMES = (
    ["r_mean", "g_mean", "b_mean", "u_mean", "v_mean", "x_mean", "y_mean", "z_mean",
     "pitch", "roll", "above_horizon", "r_std", "g_std", "b_std", "x_std", "y_std", "z_std"]
    + [f"reserved_{i}" for i in range(5)]
)


class GroundError(ValueError):
    pass


@dataclass(frozen=True)
class GroundPlane:
    """Plane ``normal . p + offset = 0`` with the unit normal pointing up (negative Y)."""

    normal: tuple
    offset: float
    inliers: int = 0
    rms: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0:
            raise GroundError("plane normal must be non-zero")
        n = n / norm
        d = float(self.offset) / float(norm)
        if n[1] > 0:
            n, d = -n, -d
        if n[1] == 0:
            raise GroundError("a vertical plane cannot be the road")
        object.__setattr__(self, "normal", tuple(float(v) for v in n))
        object.__setattr__(self, "offset", d)

    @classmethod
    def horizontal(cls, y_road: float) -> "GroundPlane":
        """Flat road at ``y = y_road`` (Y points down)."""
        return cls((0.0, -1.0, 0.0), y_road)

    def height_above(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        return pts @ np.asarray(self.normal) + self.offset

    def y_at(self, x, z):
        nx, ny, nz = self.normal
        return -(nx * np.asarray(x) + nz * np.asarray(z) + self.offset) / ny

    def shifted(self, dy: float) -> "GroundPlane":
        """The plane moved by ``dy`` along +Y."""
        return GroundPlane(self.normal, self.offset - self.normal[1] * dy, self.inliers, self.rms)

    def angle_to(self, other: "GroundPlane") -> float:
        c = float(np.clip(np.dot(self.normal, other.normal), -1.0, 1.0))
        return math.degrees(math.acos(c))

    def to_dict(self) -> dict:
        return {"normal": list(self.normal), "offset": self.offset, "inliers": self.inliers, "rms": self.rms}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundPlane":
        return cls(tuple(d["normal"]), d["offset"], d.get("inliers", 0), d.get("rms", 0.0))


def fit_plane_lstsq(pts: np.ndarray):
    """Total-least-squares plane through ``pts``: (unit normal, offset, singular values)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    c = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[-1]
    return n, -float(n @ c), s


# ---------------------------------------------------------------------------
# Superpixel features


@dataclass(frozen=True)
class SuperpixelFeatures:
    ids: np.ndarray
    values: np.ndarray
    degenerate: np.ndarray

    def __len__(self):
        return self.ids.shape[0]


def _pitch_roll(normal) -> tuple:
    n = np.asarray(normal, dtype=np.float64)
    if n[1] > 0:
        n = -n
    return math.atan2(n[2], -n[1]), math.atan2(n[0], -n[1])


def extract_superpixel_features(cloud: PointCloud, colors, labels, calib: CameraCalib,
                                horizon_row: float | None = None) -> SuperpixelFeatures:
    pts = cloud.points
    if pts.shape[0] == 0:
        return SuperpixelFeatures(np.zeros(0, dtype=np.int64), np.zeros((0, N_FEATURES)), np.zeros(0, bool))
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(labels).reshape(-1)
    if colors.shape[0] != pts.shape[0] or labels.shape[0] != pts.shape[0]:
        raise GroundError("colors and labels must cover every point")
    if horizon_row is None:
        horizon_row = calib.horizon_row
    uv = calib.project(pts)
    ids = np.unique(labels)
    values = np.zeros((ids.size, N_FEATURES))
    degenerate = np.zeros(ids.size, dtype=bool)
    for row, sp in enumerate(ids):
        m = labels == sp
        p, col, q = pts[m], colors[m], uv[m]
        values[row, 0:3] = col.mean(axis=0)
        values[row, 3:5] = q.mean(axis=0)
        values[row, 5:8] = p.mean(axis=0)
        if p.shape[0] >= 3:
            n, _, s = fit_plane_lstsq(p)
            if s[1] <= 1e-9 * max(s[0], 1e-300):
                degenerate[row] = True
            else:
                values[row, 8:10] = _pitch_roll(n)
        else:
            degenerate[row] = True
        values[row, 10] = 1.0 if values[row, 4] < horizon_row else 0.0
        values[row, 11:14] = col.std(axis=0)
        values[row, 14:17] = p.std(axis=0)
    return SuperpixelFeatures(ids, values, degenerate)


# ---------------------------------------------------------------------------
# Classifier


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class GroundClassifier:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    input_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, seed: int = 0) -> "GroundClassifier":
        rng = np.random.default_rng(seed)
        lim = 1.0 / math.sqrt(N_FEATURES)
        return cls(rng.uniform(-lim, lim, (N_HIDDEN, N_FEATURES)), np.zeros(N_HIDDEN),
                   rng.uniform(-lim, lim, N_HIDDEN), 0.0, seed=seed)

    @classmethod
    def zeros(cls) -> "GroundClassifier":
        return cls(np.zeros((N_HIDDEN, N_FEATURES)), np.zeros(N_HIDDEN), np.zeros(N_HIDDEN), 0.0)

    def _standardize(self, X):
        return (X - self.input_mean) / self.input_scale

    def forward(self, X):
        Z = self._standardize(X)
        H = np.tanh(Z @ self.W1.T + self.b1)
        logits = H @ self.w2 + self.b2
        return Z, H, logits

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"shape": [N_HIDDEN, N_FEATURES], "activation": "tanh",
                 "weights": self.W1.ravel().tolist(), "bias": self.b1.tolist()},
                {"shape": [1, N_HIDDEN], "activation": "sigmoid",
                 "weights": self.w2.tolist(), "bias": [float(self.b2)]},
            ],
            "input_mean": self.input_mean.tolist(),
            "input_scale": self.input_scale.tolist(),
            "feature_names": FEATURE_NAMES,
            "seed": self.seed,
            "training": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundClassifier":
        l1, l2 = d["layers"]
        return cls(np.asarray(l1["weights"], dtype=np.float64).reshape(l1["shape"]),
                   np.asarray(l1["bias"], dtype=np.float64),
                   np.asarray(l2["weights"], dtype=np.float64).reshape(-1),
                   float(l2["bias"][0]),
                   np.asarray(d.get("input_mean", np.zeros(N_FEATURES)), dtype=np.float64),
                   np.asarray(d.get("input_scale", np.ones(N_FEATURES)), dtype=np.float64),
                   d.get("seed"), d.get("training", {}))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path) -> "GroundClassifier":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, SuperpixelFeatures):
        features = features.values
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise GroundError(f"expected {N_FEATURES}-dimensional features, got shape {X.shape}")
    return X


def classify_ground(clf: GroundClassifier, features) -> np.ndarray:
    X = _as_matrix(features)
    _, _, logits = clf.forward(X)
    return _sigmoid(logits)


def loss_and_grads(clf: GroundClassifier, X, y):
    """Mean binary cross-entropy and its gradients w.r.t. (W1, b1, w2, b2)."""
    Z, H, logits = clf.forward(X)
    # log(1 + exp(-|z|)) form keeps the loss finite for saturated logits
    loss = np.mean(np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits))))
    dlog = (_sigmoid(logits) - y) / X.shape[0]
    gw2 = H.T @ dlog
    gb2 = float(dlog.sum())
    dpre = np.outer(dlog, clf.w2) * (1.0 - H ** 2)
    gW1 = dpre.T @ Z
    gb1 = dpre.sum(axis=0)
    return float(loss), (gW1, gb1, gw2, gb2)


def train_ground_classifier(features, labels, epochs: int = 500, learning_rate: float = 0.5,
                            seed: int = 0, standardize: bool = True) -> GroundClassifier:
    """Full-batch gradient descent on cross-entropy. Labels: 1 = ground, 0 = not ground."""
    X = _as_matrix(features)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise GroundError("one label per feature vector")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise GroundError("training needs both ground and non-ground examples")
    clf = GroundClassifier.initial(seed)
    if standardize:
        clf.input_mean = X.mean(axis=0)
        sd = X.std(axis=0)
        clf.input_scale = np.where(sd > 1e-12, sd, 1.0)
    losses = []
    for _ in range(epochs):
        loss, (gW1, gb1, gw2, gb2) = loss_and_grads(clf, X, y)
        losses.append(loss)
        clf.W1 -= learning_rate * gW1
        clf.b1 -= learning_rate * gb1
        clf.w2 -= learning_rate * gw2
        clf.b2 -= learning_rate * gb2
    final, _ = loss_and_grads(clf, X, y)
    clf.meta = {"epochs": epochs, "learning_rate": learning_rate, "n_examples": int(X.shape[0]),
                "initial_loss": losses[0] if losses else final, "final_loss": final}
    clf.meta["loss_trace"] = losses + [final]
    return clf


# ---------------------------------------------------------------------------
# RANSAC


def ransac_plane(cloud, point_weights=None, iterations: int = 500, inlier_threshold: float = 0.05,
                 seed: int = 0, cutoff: float = GROUND_CUTOFF, chunk: int = 64) -> GroundPlane:
    """Best 3-point hypothesis by inlier count, re-fit by least squares over its inliers.

    Hypotheses come from one seeded draw; ties go to the lowest hypothesis index.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if point_weights is not None:
        w = np.asarray(point_weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise GroundError("one weight per point")
        pts = pts[w > cutoff]
    m = pts.shape[0]
    if m < 3:
        raise GroundError(f"RANSAC needs at least 3 candidate points, got {m}")
    rng = np.random.default_rng(seed)
    samples = np.stack([rng.choice(m, 3, replace=False) for _ in range(iterations)]) if iterations else \
        np.zeros((0, 3), dtype=np.int64)
    a, b, c = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    scale = np.maximum(np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - a, axis=1), 1e-300)
    valid = norms > 1e-9 * scale
    if not valid.any():
        raise GroundError("all RANSAC hypotheses were degenerate (collinear samples)")
    counts = np.full(iterations, -1, dtype=np.int64)
    idx_valid = np.flatnonzero(valid)
    unit = normals[idx_valid] / norms[idx_valid, None]
    offs = -np.einsum("ij,ij->i", unit, a[idx_valid])
    for s in range(0, idx_valid.size, chunk):
        dist = np.abs(pts @ unit[s:s + chunk].T + offs[s:s + chunk])
        counts[idx_valid[s:s + chunk]] = (dist <= inlier_threshold).sum(axis=0)
    best = int(np.argmax(counts))
    bn = normals[best] / norms[best]
    bd = -float(bn @ a[best])
    inl = np.abs(pts @ bn + bd) <= inlier_threshold
    if inl.sum() >= 3:
        n, d, s = fit_plane_lstsq(pts[inl])
        if s[1] > 1e-12:
            bn, bd = n, d
    resid = pts @ bn + bd
    inl = np.abs(resid) <= inlier_threshold
    rms = float(np.sqrt(np.mean(resid[inl] ** 2))) if inl.any() else 0.0
    return GroundPlane(tuple(bn), bd, int(inl.sum()), rms)


def estimate_ground_direct(cloud: PointCloud, band=DIRECT_BAND, **kwargs) -> GroundPlane:
    """RANSAC on points whose height lies in ``band`` (camera Y, meters); no classifier needed."""
    pts = cloud.points
    m = (pts[:, 1] >= band[0]) & (pts[:, 1] <= band[1])
    return ransac_plane(PointCloud(pts[m]), **kwargs)


def estimate_ground(cloud: PointCloud, clf: GroundClassifier, features: SuperpixelFeatures, labels,
                    **kwargs) -> GroundPlane:
    """Classify superpixels, then run RANSAC on the points of superpixels judged to be ground."""
    prob = classify_ground(clf, features)
    lookup = dict(zip(features.ids.tolist(), prob.tolist()))
    weights = np.array([lookup[l] for l in np.asarray(labels).tolist()])
    return ransac_plane(cloud, point_weights=weights, **kwargs)
