"""
Loss terms evaluated on a :class:`~himor.tree.MotionTree`.

These are thin wrappers that build an :class:`~himor.engine.Engine` for the
tree and return plain floats; the optimizer works on the engine directly.
"""

from __future__ import annotations

import numpy as np
import torch

from .config import LossWeights
from .engine import Engine, accel_triples, rigidity_pairs
from .errors import InvalidBinding
from .tracks import TrackSet
from .tree import MotionTree, OrientedPoint


def supervised_points(tree: MotionTree, tracks: TrackSet, bindings=None) -> np.ndarray:
    """Canonical positions of the bound tracks; one supervised point per track by default."""
    if bindings is None:
        bindings = np.arange(tracks.num_tracks)
    bindings = np.asarray(bindings, dtype=np.int64)
    if np.any(bindings < 0) or np.any(bindings >= tracks.num_tracks):
        raise InvalidBinding("binding refers to a missing track")
    return tracks.positions[bindings, tree.canonical_frame]


def _as_positions(points) -> np.ndarray:
    if len(points) == 0:
        return np.zeros((0, 3))
    return np.stack([p.position if isinstance(p, OrientedPoint) else np.asarray(p, float) for p in points])


def loss_track(tree: MotionTree, tracks: TrackSet, point_bindings=None, frame_batch=None, K: int = 4) -> float:
    """Mean squared 3D error over visible (point, frame) pairs of the batch."""
    pts = supervised_points(tree, tracks, point_bindings)
    eng = Engine(tree, pts, K=K, tracks=tracks, bindings=point_bindings, rigidity_knn=0)
    frames = range(tree.frame_count) if frame_batch is None else frame_batch
    with torch.no_grad():
        return float(eng.loss_track(frames))


def loss_rigidity(tree: MotionTree, frame_pairs, weights_per_level=(1.0,), rigidity_knn: int = 5) -> float:
    eng = Engine(tree, None, rigidity_knn=rigidity_knn)
    with torch.no_grad():
        return float(eng.loss_rigidity(list(frame_pairs), list(weights_per_level)))


def reg_basis_acceleration(tree: MotionTree) -> float:
    eng = Engine(tree, None, rigidity_knn=0)
    with torch.no_grad():
        return float(eng.reg_basis_acceleration())


def reg_track_acceleration(tree: MotionTree, points, frame_triples, K: int = 4) -> float:
    eng = Engine(tree, _as_positions(points), K=K, rigidity_knn=0)
    with torch.no_grad():
        return float(eng.reg_track_acceleration(list(frame_triples)))


def reg_radius(tree: MotionTree) -> float:
    eng = Engine(tree, None, rigidity_knn=0)
    with torch.no_grad():
        return float(eng.reg_radius())


def total_loss(tree: MotionTree, tracks: TrackSet, weights: LossWeights, batch, K: int = 4,
               rigidity_knn: int = 5) -> tuple[float, dict]:
    """
    Weighted sum of every term for one frame batch.

    The breakdown holds unweighted values except ``rigid``, which already
    carries its per-level weights.
    """
    pts = supervised_points(tree, tracks)
    eng = Engine(tree, pts, K=K, tracks=tracks, rigidity_knn=rigidity_knn)
    with torch.no_grad():
        terms = eng.total_loss(batch, weights)
    d = terms.as_floats()
    return d["total"], d


def compute_gradients(tree: MotionTree, tracks: TrackSet, weights: LossWeights, batch, K: int = 4,
                      rigidity_knn: int = 5):
    """Returns ``(store, grad)``: the flattened parameters and dL/dparams in the same order."""
    pts = supervised_points(tree, tracks)
    eng = Engine(tree, pts, K=K, tracks=tracks, rigidity_knn=rigidity_knn)
    theta = eng.store.theta.clone().requires_grad_(True)
    terms = eng.total_loss(batch, weights, theta)
    (grad,) = torch.autograd.grad(terms.total, theta, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(theta)
    return eng.store, grad.detach().numpy()


__all__ = [
    "supervised_points", "loss_track", "loss_rigidity", "reg_basis_acceleration",
    "reg_track_acceleration", "reg_radius", "total_loss", "compute_gradients",
    "rigidity_pairs", "accel_triples",
]
