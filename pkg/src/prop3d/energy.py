"""Depth-informed box potentials and the linear energy over them.

Lower energy is better. Potentials are read off integral accumulators, so each
box costs a constant number of lookups regardless of its size.
"""
from __future__ import annotations

import datetime
import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .geometry import OrientedBox3D, PointCloud
from .ground import GroundPlane
from .voxels import (GridSpec, IntegralGrid, VoxelGrid, box_ranges, build_height_prior,
                     build_integral, carve_free_space, voxelize)

CONTRAST_MARGIN = 0.6
CONTRAST_EPS = 1e-6
CONTRAST_CAP = 1e3
SHARED = "shared"
POTENTIAL_NAMES = ("pcd", "fs", "ht", "ht_contr")


class EnergyError(ValueError):
    pass


class PotentialVector(NamedTuple):
    phi_pcd: float
    phi_fs: float
    phi_ht: float
    phi_ht_contr: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


@dataclass
class ClassModel:
    name: str
    weights: np.ndarray
    templates: list
    mu_ht: float
    sigma_ht: float
    sigma_road: float = 0.0
    class_id: Optional[int] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(4)
        self.templates = [tuple(float(v) for v in t) for t in self.templates]
        if not self.sigma_ht > 0:
            raise EnergyError("sigma_ht must be positive")
        if self.sigma_road < 0:
            raise EnergyError("sigma_road must be non-negative")
        if not self.templates:
            raise EnergyError("a class model needs at least one size template")
        if any(len(t) != 3 or min(t) <= 0 for t in self.templates):
            raise EnergyError("templates are positive (sx, sy, sz) triples")

    @property
    def is_shared(self) -> bool:
        return self.name == SHARED

    def with_weights(self, w) -> "ClassModel":
        return ClassModel(self.name, np.asarray(w, dtype=np.float64), list(self.templates), self.mu_ht,
                          self.sigma_ht, self.sigma_road, self.class_id, dict(self.provenance))

    def to_dict(self) -> dict:
        return {
            "class": self.name,
            "class_id": self.class_id,
            "weights": dict(zip(POTENTIAL_NAMES, self.weights.tolist())),
            "templates": [list(t) for t in self.templates],
            "height": {"mu": self.mu_ht, "sigma": self.sigma_ht},
            "sigma_road": self.sigma_road,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassModel":
        w = d["weights"]
        if isinstance(w, dict):
            w = [w[k] for k in POTENTIAL_NAMES]
        return cls(d["class"], w, d["templates"], d["height"]["mu"], d["height"]["sigma"],
                   d.get("sigma_road", 0.0), d.get("class_id"), d.get("provenance", {}))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "ClassModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def provenance(training_payload: bytes, **extra) -> dict:
    out = {"training_hash": hashlib.sha256(training_payload).hexdigest()[:16],
           "date": datetime.date.today().isoformat()}
    out.update(extra)
    return out


@dataclass
class SceneGrids:
    """Occupancy, free-space and per-class height-prior accumulators for one scene."""

    spec: GridSpec
    occupancy: VoxelGrid
    occ: IntegralGrid
    free: IntegralGrid
    height: dict = field(default_factory=dict)

    def height_for(self, model: ClassModel) -> IntegralGrid:
        try:
            return self.height[model.name]
        except KeyError:
            raise EnergyError(f"no height-prior grid for class {model.name!r}") from None


def build_scene_grids(cloud: PointCloud, spec: GridSpec, plane: GroundPlane, models,
                      camera_origin=(0.0, 0.0, 0.0)) -> SceneGrids:
    occ = voxelize(cloud, spec)
    free = carve_free_space(occ, camera_origin)
    grids = SceneGrids(spec, occ, build_integral(occ), build_integral(free))
    for m in models:
        add_height_grid(grids, plane, m)
    return grids


def add_height_grid(grids: SceneGrids, plane: GroundPlane, model: ClassModel) -> None:
    hp = build_height_prior(grids.occupancy, plane, model.mu_ht, model.sigma_ht)
    grids.height[model.name] = build_integral(hp)


# ---------------------------------------------------------------------------
# Single-box potentials


def _range(ig: IntegralGrid, b: OrientedBox3D, margin: float = 0.0):
    r, _ = box_ranges(ig.spec, b.as_array()[None, :], margin)
    cnt = int((r[0, 1] - r[0, 0]) * (r[0, 3] - r[0, 2]) * (r[0, 5] - r[0, 4]))
    return r, cnt


def _mean(ig: IntegralGrid, b: OrientedBox3D, margin: float = 0.0) -> float:
    r, cnt = _range(ig, b, margin)
    if cnt == 0:
        return 0.0
    return float(kernels.box_sums(ig.S, r)[0]) / cnt


def phi_pcd(occ_integral: IntegralGrid, b: OrientedBox3D) -> float:
    return _mean(occ_integral, b)


def phi_fs(free_integral: IntegralGrid, b: OrientedBox3D) -> float:
    r, cnt = _range(free_integral, b)
    if cnt == 0:
        return 0.0
    return 1.0 - float(kernels.box_sums(free_integral.S, r)[0]) / cnt


def phi_ht(htprior_integral: IntegralGrid, b: OrientedBox3D) -> float:
    return min(max(_mean(htprior_integral, b), 0.0), 1.0)


def contrast(a: float, a_plus: float, eps: float = CONTRAST_EPS, cap: float = CONTRAST_CAP) -> float:
    if a <= 0:
        return 0.0
    return min(a / max(a_plus - a, eps), cap)


def phi_ht_contr(htprior_integral: IntegralGrid, b: OrientedBox3D, margin: float = CONTRAST_MARGIN) -> float:
    a = phi_ht(htprior_integral, b)
    if a <= 0:
        return 0.0
    return contrast(a, min(max(_mean(htprior_integral, b, margin), 0.0), 1.0))


def energy(grids: SceneGrids, b: OrientedBox3D, model: ClassModel, margin: float = CONTRAST_MARGIN):
    """(E, potentials) for one box; E is the weighted sum of the four potentials."""
    if grids is None or grids.occ is None or grids.free is None:
        raise EnergyError("occupancy and free-space grids are required")
    phi = potentials_array(grids, b.as_array()[None, :], model, margin)[0]
    return float(phi @ model.weights), PotentialVector(*phi.tolist())


# ---------------------------------------------------------------------------
# Batched potentials


def potentials_from_ranges(grids: SceneGrids, ranges, ranges_plus, model: ClassModel) -> np.ndarray:
    ht = grids.height_for(model)
    return kernels.potentials(grids.occ.S, grids.free.S, ht.S, ranges, ranges_plus,
                              CONTRAST_EPS, CONTRAST_CAP)


def potentials_array(grids: SceneGrids, boxes: np.ndarray, model: ClassModel,
                     margin: float = CONTRAST_MARGIN) -> np.ndarray:
    """(N, 4) potentials for (N, 7) box rows."""
    r, _ = box_ranges(grids.spec, boxes)
    rp, _ = box_ranges(grids.spec, boxes, margin)
    return potentials_from_ranges(grids, r, rp, model)


def energies(phi: np.ndarray, weights) -> np.ndarray:
    return np.asarray(phi, dtype=np.float64) @ np.asarray(weights, dtype=np.float64)
