"""Seeded scene builders shared by module and acceptance tests."""
import math

import numpy as np

from prop3d.geometry import OrientedBox3D, iou_3d_many
from prop3d.ground import GroundPlane, N_FEATURES
from prop3d.learning import TrainingPair


def planted_plane(seed, n=1000, outlier_fraction=0.3, noise=0.02, max_tilt_deg=5.0):
    """Points on a random near-horizontal road plus uniform outliers; returns (points, plane)."""
    rng = np.random.default_rng(seed)
    pitch, roll = np.radians(rng.uniform(-max_tilt_deg, max_tilt_deg, 2))
    normal = np.array([math.sin(roll), -math.cos(pitch) * math.cos(roll), math.sin(pitch) * math.cos(roll)])
    normal /= np.linalg.norm(normal)
    offset = rng.uniform(1.4, 1.9)
    plane = GroundPlane(tuple(normal), offset)
    n_out = int(round(outlier_fraction * n))
    n_in = n - n_out
    x = rng.uniform(-15, 15, n_in)
    z = rng.uniform(3, 40, n_in)
    y = plane.y_at(x, z)
    on = np.c_[x, y, z] + np.asarray(plane.normal) * rng.normal(0, noise, n_in)[:, None]
    out = rng.uniform((-15, -3, 3), (15, 1.0, 40), (n_out, 3))
    pts = np.vstack([on, out])
    return pts[rng.permutation(n)], plane


def separable_ground_features(seed, n=400):
    """Feature rows where ground superpixels sit at y ~ 1.65 +- 0.05 and the rest above y = 1."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1, (n, N_FEATURES))
    y = (np.arange(n) % 2).astype(np.float64)
    X[:, 6] = np.where(y == 1, rng.uniform(1.60, 1.70, n), rng.uniform(-2.0, 0.95, n))
    return X, y


def separable_pairs(seed, n_scenes=20, n_cands=500):
    """Training pairs whose GT has strictly the densest, least-free potentials of its scene.

    Candidate occupancy falls and free space rises with the task loss, so a weight
    vector favouring occupancy and penalizing free space separates every pair.
    The two height features are uninformative noise.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for s in range(n_scenes):
        gt = OrientedBox3D((rng.uniform(-10, 10), 0.9, rng.uniform(8, 40)), (3.9, 1.56, 1.6),
                           float(rng.choice([0.0, 0.5 * math.pi])))
        g = gt.as_array()
        boxes = np.repeat(g[None], n_cands, axis=0)
        boxes[:, 0] += rng.uniform(-3, 3, n_cands) * rng.random(n_cands) ** 2
        boxes[:, 2] += rng.uniform(-3, 3, n_cands) * rng.random(n_cands) ** 2
        boxes[:, 3:6] *= rng.uniform(0.85, 1.15, (n_cands, 3))
        boxes[:, 6] = rng.choice([0.0, 0.5 * math.pi], n_cands)
        loss = 1.0 - iou_3d_many(gt, boxes)
        gt_phi = np.array([rng.uniform(0.5, 0.9), rng.uniform(0.05, 0.3), rng.random(), rng.uniform(0, 5)])
        phi = np.empty((n_cands, 4))
        phi[:, 0] = gt_phi[0] - 0.02 - 0.4 * loss * rng.uniform(0.5, 1.0, n_cands)
        phi[:, 1] = gt_phi[1] + 0.02 + 0.4 * loss * rng.uniform(0.5, 1.0, n_cands)
        phi[:, 2] = rng.random(n_cands)
        phi[:, 3] = rng.uniform(0, 5, n_cands)
        pairs.append(TrainingPair(f"{seed}-{s}", gt, gt_phi, boxes, phi, loss))
    return pairs
