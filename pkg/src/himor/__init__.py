"""Hierarchical SE(3) motion trees fitted to 3D point tracks."""

from .config import FitConfig, LossWeights
from .errors import HimorError
from .se3 import SE3, DualQuat, Quat, blend_se3, dq_blend, kabsch_se3
from .tracks import TrackSet
from .tree import MotionTree, OrientedPoint, freeze_levels

__version__ = "0.1.0"

__all__ = [
    "FitConfig", "LossWeights", "HimorError", "SE3", "DualQuat", "Quat", "blend_se3",
    "dq_blend", "kabsch_se3", "TrackSet", "MotionTree", "OrientedPoint", "freeze_levels",
]
