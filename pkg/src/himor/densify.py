"""Adding and removing leaf nodes where the current tree explains points poorly."""

from __future__ import annotations

import math

import numpy as np
import torch

from .cluster import farthest_point_sampling, knn_median_radius
from .errors import ShapeMismatch
from .tree import ROOT_ID, MotionTree, OrientedPoint


def curve_distance(a, b) -> float:
    """Largest pointwise distance between two equally long trajectories."""
    a = np.asarray(a, float).reshape(-1, 3)
    b = np.asarray(b, float).reshape(-1, 3)
    if a.shape != b.shape or len(a) == 0:
        raise ShapeMismatch(f"trajectories of shape {a.shape} and {b.shape}")
    return float(np.linalg.norm(a - b, axis=1).max())


def _positions(points) -> np.ndarray:
    return np.stack([p.position if isinstance(p, OrientedPoint) else np.asarray(p, float) for p in points])


def coverage_distances(tree: MotionTree, points, K: int = 4) -> np.ndarray:
    """
    For each point, the smallest curve distance between its deformed
    trajectory and the trajectories of its ``K`` nearest leaves.
    """
    from .engine import Engine

    pos = _positions(points)
    eng = Engine(tree, pos, K=K, rigidity_knn=0)
    frames = list(range(tree.frame_count))
    with torch.no_grad():
        state = eng.node_motions(frames)
        ptraj = eng.point_positions(frames, node_state=state).numpy()
    ntraj = state[2].numpy()
    knn = eng.knn.numpy()
    d = np.linalg.norm(ptraj[:, None] - ntraj[knn], axis=-1).max(-1)   # [P, k]
    return d.min(1)


def default_threshold(canonical_positions, ratio: float = 0.05) -> float:
    p = np.asarray(canonical_positions, float)
    return ratio * float(np.linalg.norm(p.max(0) - p.min(0)))


def densify_by_curve_distance(tree: MotionTree, points, K: int = 4, threshold: float = None,
                              seed: int = 0, points_per_node: int = 20) -> MotionTree:
    """
    Sample new leaves among points whose nearest leaves do not follow them.

    Each new node joins its nearest first-level node as a sibling (same
    parent, copied coefficients), so it inherits that node's motion.
    """
    pos = _positions(points)
    if threshold is None:
        threshold = default_threshold(pos)
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if math.isinf(threshold):
        return tree.copy()
    cand = np.nonzero(coverage_distances(tree, pos, K) > threshold)[0]
    tree = tree.copy()
    if len(cand) == 0:
        return tree
    first = tree.nodes_at_level(1)
    if not first:
        return tree
    count = math.ceil(len(cand) / points_per_node)
    chosen = pos[cand[farthest_point_sampling(pos[cand], count, seed)]]
    first_pos = np.stack([tree.nodes[i].position for i in first])
    new_ids = []
    for p in chosen:
        d2 = ((first_pos - p) ** 2).sum(1)
        near = tree.nodes[first[int(np.lexsort((np.asarray(first), d2))[0])]]
        new_ids.append(tree.add_node(near.parent_id, p, 1.0, near.coefficients.copy()))
    level_ids = tree.nodes_at_level(1)
    radii = knn_median_radius(np.stack([tree.nodes[i].position for i in level_ids]), 3,
                              fallback=threshold)
    for nid, r in zip(level_ids, radii):
        if nid in new_ids:
            tree.nodes[nid].radius = float(r)
    tree.validate()
    return tree


def refine_by_gradient(tree: MotionTree, grad_stats: dict, add_thresh: float, prune_thresh: float,
                       points=None, K: int = 4) -> MotionTree:
    """
    Split leaves with large accumulated coefficient gradients and prune idle
    ones.

    ``grad_stats`` maps leaf id to its accumulated gradient norm. A split adds
    one sibling at the mean of the points whose nearest leaf is the split
    leaf. A leaf is pruned when its statistic is below ``prune_thresh`` and
    every point that uses it keeps at least one other leaf among its ``K``
    nearest; the last child of a parent is never pruned.
    """
    from .tree import knn_leaves

    tree = tree.copy()
    leaves = tree.leaves()
    missing = [i for i in leaves if i not in grad_stats]
    if missing:
        raise ValueError(f"gradient statistics missing for leaves {missing}")
    pos = _positions(points) if points is not None and len(points) else np.zeros((0, 3))
    nearest = [knn_leaves(tree, p, 1, leaves)[0] for p in pos]
    knn_sets = [knn_leaves(tree, p, K, leaves) for p in pos]

    for leaf in leaves:
        g = float(grad_stats[leaf])
        node = tree.nodes[leaf]
        if g > add_thresh:
            assigned = [i for i, n in enumerate(nearest) if n == leaf]
            if not assigned:
                continue
            tree.add_node(node.parent_id, pos[assigned].mean(0), node.radius, node.coefficients.copy())
        elif g < prune_thresh:
            if node.parent_id == ROOT_ID and len(tree.nodes_at_level(1)) <= 1:
                continue
            if len(tree.children(node.parent_id)) <= 1:
                continue
            users = [s for s in knn_sets if leaf in s]
            if any(len(s) < 2 for s in users):
                continue
            tree.remove_node(leaf)
            knn_sets = [[i for i in s if i != leaf] for s in knn_sets]
    tree.validate()
    return tree
