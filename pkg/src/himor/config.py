"""Loss weights and fitting hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional


@dataclass
class LossWeights:
    track: float = 2.0
    # kept for configs written against 2D + depth supervision; 3D tracks ignore it
    track_depth: float = 0.1
    # index 0 is level 1; deeper levels reuse the last entry
    rigid_per_level: list = field(default_factory=lambda: [0.5, 0.5])
    rigid_level1_post: float = 2.5
    accel_bases: float = 0.1
    accel_tracks: float = 2.0
    radius_reg: float = 0.0001

    def __post_init__(self):
        self.rigid_per_level = [float(w) for w in self.rigid_per_level]
        vals = [self.track, self.track_depth, self.rigid_level1_post, self.accel_bases,
                self.accel_tracks, self.radius_reg, *self.rigid_per_level]
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def zeros(cls) -> "LossWeights":
        return cls(0.0, 0.0, [0.0], 0.0, 0.0, 0.0, 0.0)

    def activated(self) -> "LossWeights":
        """Weights once second-level nodes exist: level-1 rigidity raised."""
        rig = list(self.rigid_per_level) or [0.0]
        rig[0] = self.rigid_level1_post
        return LossWeights(self.track, self.track_depth, rig, self.rigid_level1_post,
                           self.accel_bases, self.accel_tracks, self.radius_reg)


@dataclass
class FitConfig:
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    lr_basis: float = 1.6e-4
    lr_position: float = 1.6e-5
    lr_radius: float = 5e-4
    lr_coefficients: float = 1e-2
    stage1_steps: int = 2000
    stage2_steps: int = 2000
    densify_every: int = 500
    batch_frames: int = 8
    rigidity_knn: int = 5
    seed: int = 0
    # tree shape
    num_nodes: int = 50
    num_bases: int = 10
    children_per_node: int = 10
    child_bases: int = 5
    max_levels: int = 2
    # levels trained in stage 2; None trains all of them
    stage2_levels: Optional[list] = None
    skin_knn: int = 4
    spawn_radius_mult: float = 3.0
    # densification
    densify_threshold_ratio: float = 0.05
    points_per_node: int = 20
    refine_add_thresh: float = 1.0
    refine_prune_thresh: float = 0.0
    min_radius: float = 1e-6
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.stage2_levels is not None:
            self.stage2_levels = sorted(int(v) for v in self.stage2_levels)
        rates = (self.lr_basis, self.lr_position, self.lr_radius, self.lr_coefficients)
        if any(r <= 0 for r in rates):
            raise ValueError("learning rates must be positive")
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.batch_frames < 1 or self.densify_every < 1:
            raise ValueError("batch_frames and densify_every must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"format_version"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})
