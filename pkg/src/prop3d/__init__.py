"""Depth-informed 3D object proposals from point clouds."""
from .energy import ClassModel, SceneGrids, build_scene_grids, energy, potentials_array
from .evaluation import GTObject, SceneProposals, alp, average_recall, oracle_recall
from .geometry import CameraCalib, OrientedBox3D, PointCloud, Rect2D, iou_2d, iou_3d
from .ground import GroundClassifier, GroundPlane, estimate_ground, estimate_ground_direct, ransac_plane
from .kernels import BACKEND
from .learning import SsvmConfig, fit_height_stats, fit_templates, train_ssvm
from .sampler import ProposalList, ProposeConfig, greedy_nms, propose
from .voxels import GridSpec, IntegralGrid, VoxelGrid

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CameraCalib", "ClassModel", "GTObject", "GridSpec", "GroundClassifier", "GroundPlane",
    "IntegralGrid", "OrientedBox3D", "PointCloud", "ProposalList", "ProposeConfig", "Rect2D", "SceneGrids",
    "SceneProposals", "SsvmConfig", "VoxelGrid", "alp", "average_recall", "build_scene_grids", "energy",
    "estimate_ground", "estimate_ground_direct", "fit_height_stats", "fit_templates", "greedy_nms", "iou_2d",
    "iou_3d", "oracle_recall", "potentials_array", "propose", "ransac_plane", "train_ssvm",
]
