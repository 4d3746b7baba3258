"""Observed 3D trajectories and their construction from 2D tracks plus depth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDepth, ShapeMismatch
from .se3 import SE3, qrotate, qconj


@dataclass
class TrackSet:
    """``N`` trajectories over ``T`` frames with per-frame visibility."""

    positions: np.ndarray   # [N, T, 3]
    visibility: np.ndarray  # [N, T] bool

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ShapeMismatch(f"positions must be [N, T, 3], got {self.positions.shape}")
        if self.visibility.shape != self.positions.shape[:2]:
            raise ShapeMismatch("visibility must be [N, T] matching positions")
        if len(self.positions) and not self.visibility.any(axis=1).all():
            raise ShapeMismatch("every track must be visible in at least one frame")

    @classmethod
    def fully_visible(cls, positions) -> "TrackSet":
        positions = np.asarray(positions, float)
        return cls(positions, np.ones(positions.shape[:2], dtype=bool))

    @property
    def num_tracks(self) -> int:
        return self.positions.shape[0]

    @property
    def frame_count(self) -> int:
        return self.positions.shape[1]

    def canonical_positions(self, frame: int) -> np.ndarray:
        return self.positions[:, frame].copy()

    def bbox_diagonal(self, frame: int) -> float:
        p = self.positions[:, frame]
        return float(np.linalg.norm(p.max(0) - p.min(0))) if len(p) else 0.0

    def subset(self, index) -> "TrackSet":
        return TrackSet(self.positions[index], self.visibility[index])

    def __eq__(self, other):
        if not isinstance(other, TrackSet):
            return NotImplemented
        return (self.positions.shape == other.positions.shape
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.visibility, other.visibility))


@dataclass
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    world_from_camera: list[SE3] = field(default_factory=list)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def pose(self, t: int) -> SE3:
        return self.world_from_camera[t] if self.world_from_camera else SE3.identity()

    def project(self, points: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
        """World points -> (pixels [n, 2], depth [n])."""
        T = self.pose(t)
        qi = qconj(T.q)
        pc = qrotate(qi, np.asarray(points, float) - T.translation)
        z = pc[..., 2]
        uv = np.stack([self.fx * pc[..., 0] / z + self.cx, self.fy * pc[..., 1] / z + self.cy], -1)
        return uv, z


def unproject_tracks(tracks2d, depth, visibility, camera: PinholeCamera) -> TrackSet:
    """
    Back-project pixel tracks with per-entry depth to world coordinates.

    Invisible entries take the position of the nearest visible frame of the
    same track (earlier frame on ties) and stay marked invisible.
    """
    uv = np.asarray(tracks2d, float)
    z = np.asarray(depth, float)
    vis = np.asarray(visibility, bool)
    if uv.ndim != 3 or uv.shape[2] != 2 or z.shape != uv.shape[:2] or vis.shape != uv.shape[:2]:
        raise ShapeMismatch("expected tracks2d [N, T, 2], depth [N, T], visibility [N, T]")
    if np.any(vis & ~(z > 0)):
        raise InvalidDepth("visible track entry with non-positive depth")
    N, T = z.shape
    out = np.zeros((N, T, 3))
    for t in range(T):
        pose = camera.pose(t)
        zz = np.where(vis[:, t], z[:, t], 1.0)
        pc = np.stack([(uv[:, t, 0] - camera.cx) / camera.fx * zz,
                       (uv[:, t, 1] - camera.cy) / camera.fy * zz, zz], -1)
        out[:, t] = qrotate(pose.q, pc) + pose.translation
    for n in range(N):
        seen = np.nonzero(vis[n])[0]
        if len(seen) == 0:
            raise ShapeMismatch(f"track {n} is never visible")
        for t in np.nonzero(~vis[n])[0]:
            out[n, t] = out[n, seen[np.argmin(np.abs(seen - t))]]
    return TrackSet(out, vis)


def select_canonical_frame(tracks: TrackSet) -> int:
    counts = tracks.visibility.sum(0)
    return int(np.argmax(counts))
