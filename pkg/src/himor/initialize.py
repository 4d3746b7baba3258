"""
Building the motion tree from observed tracks.

The first level is fitted directly to the tracks: trajectories are clustered,
each cluster's rigid motion over time is recovered by Procrustes, and nodes
placed on the canonical point cloud blend those motions by inverse distance.
Finer levels are spawned later by clustering each leaf's residual motion.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .cluster import farthest_point_sampling, kmeans, knn_median_radius
from .errors import DegenerateGeometry
from .se3 import SE3, kabsch_se3, qconj, qmul, qnormalize, qrotate
from .tracks import TrackSet, select_canonical_frame
from .tree import BasisSet, MotionBasis, MotionTree, OrientedPoint

log = logging.getLogger(__name__)

IDW_EPS = 1e-8
FULL_TRACK_RATIO = 0.9


@dataclass
class ClusterBases:
    bases: list[MotionBasis]
    kept: list[int]                     # cluster label of each returned basis
    dropped: list[int] = field(default_factory=list)

    @property
    def warning_count(self) -> int:
        return len(self.dropped)


def idw_coefficients(position, centers, eps: float = IDW_EPS) -> np.ndarray:
    d = np.linalg.norm(np.asarray(centers, float) - np.asarray(position, float), axis=1)
    w = 1.0 / (d + eps)
    return w / w.sum()


def bases_from_clusters(tracks: TrackSet, assignments, canonical: int) -> ClusterBases:
    """One rigid motion sequence per cluster, identity at the canonical frame."""
    assignments = np.asarray(assignments)
    T = tracks.frame_count
    vis = tracks.visibility
    out = ClusterBases([], [])
    for label in np.unique(assignments):
        members = np.nonzero((assignments == label) & vis[:, canonical])[0]
        try:
            if len(members) < 3:
                raise DegenerateGeometry(f"cluster {label} has {len(members)} canonical members")
            src_all = tracks.positions[members, canonical]
            kabsch_se3(src_all, src_all)  # rejects collinear clusters
        except DegenerateGeometry as exc:
            log.warning("dropping cluster %s: %s", label, exc)
            out.dropped.append(int(label))
            continue
        solved: dict[int, SE3] = {canonical: SE3.identity()}
        for t in range(T):
            if t == canonical:
                continue
            co = members[vis[members, t]]
            if len(co) < 3:
                continue
            try:
                solved[t] = kabsch_se3(tracks.positions[co, canonical], tracks.positions[co, t])
            except DegenerateGeometry:
                continue
        frames = np.array(sorted(solved))
        seq = []
        for t in range(T):
            if t in solved:
                seq.append(solved[t])
            else:
                seq.append(solved[int(frames[np.argmin(np.abs(frames - t))])])
        out.bases.append(MotionBasis(seq))
        out.kept.append(int(label))
    return out


def init_first_level(tracks: TrackSet, M: int = 10, node_count: int = 50, seed: int = 0) -> MotionTree:
    T = tracks.frame_count
    canonical = select_canonical_frame(tracks)
    tree = MotionTree.with_root(T, canonical)

    full = tracks.visibility.mean(1) >= FULL_TRACK_RATIO
    if full.sum() < max(M, 3):
        full = np.ones(tracks.num_tracks, dtype=bool)
    sub = tracks.subset(np.nonzero(full)[0])
    features = sub.positions.reshape(sub.num_tracks, -1)
    M = min(M, sub.num_tracks)
    assign, centers = kmeans(features, M, seed=seed)
    cb = bases_from_clusters(sub, assign, canonical)
    if not cb.bases:
        raise DegenerateGeometry("every cluster was degenerate; no motion basis could be fitted")
    center_pos = centers.reshape(M, T, 3)[cb.kept, canonical]
    tree.basis_sets[0] = BasisSet(0, cb.bases)

    cand = tracks.positions[tracks.visibility[:, canonical], canonical]
    idx = farthest_point_sampling(cand, node_count, seed)
    positions = cand[idx]
    radii = knn_median_radius(positions, 3, fallback=max(tracks.bbox_diagonal(canonical), 1e-6) * 0.1)
    for p, r in zip(positions, radii):
        tree.add_node(0, p, r, idw_coefficients(p, center_pos))
    tree.validate()
    return tree


def _relative_motions(tree: MotionTree, points: np.ndarray, K: int):
    """Per leaf-engine index: relative motion of every point w.r.t. every node, all frames."""
    from .engine import Engine

    eng = Engine(tree, points, K=K, rigidity_knn=0)
    frames = list(range(tree.frame_count))
    with torch.no_grad():
        state = eng.node_motions(frames)
        pq, pt = eng.point_motions(frames, node_state=state)
    return eng, state[0].numpy(), state[1].numpy(), pq.numpy(), pt.numpy()


def _spawn_context(tree: MotionTree, points, K: int):
    pos = np.stack([p.position if isinstance(p, OrientedPoint) else np.asarray(p, float) for p in points])
    eng, gq, gt, pq, pt = _relative_motions(tree, pos, K)
    lam = 0.5 * float(np.linalg.norm(pos.max(0) - pos.min(0)))
    return pos, eng, gq, gt, pq, pt, (lam if lam > 0 else 1.0)


def _cluster_leaf(ctx, tree: MotionTree, leaf: int, child_M: int, seed: int, radius_mult: float):
    pos, eng, gq, gt, pq, pt, lam = ctx
    node = tree.nodes[leaf]
    members = np.nonzero(np.linalg.norm(pos - node.position, axis=1) <= radius_mult * node.radius)[0]
    if len(members) < child_M:
        return members, None, None
    li = eng.index[leaf]
    qinv = qconj(gq[li])                                       # [T, 4]
    rel_q = qmul(qinv[None], pq[members])                      # [m, T, 4]
    rel_t = qrotate(qinv[None], pt[members] - gt[li][None])
    rel_q = np.where(rel_q[..., :1] < 0, -rel_q, rel_q)
    feats = np.concatenate([rel_t, lam * rel_q], -1).reshape(len(members), -1)
    assign, centers = kmeans(feats, child_M, seed=seed)
    return members, assign, centers.reshape(child_M, tree.frame_count, 7)


def leaf_motion_clusters(tree: MotionTree, points, leaf: int, child_M: int = 5, seed: int = 0, K: int = 4,
                         radius_mult: float = 3.0):
    """
    Member point indices around ``leaf`` and their cluster labels by motion
    relative to the leaf, as used when spawning children. Labels are ``None``
    when the leaf has fewer than ``child_M`` members.
    """
    members, assign, _ = _cluster_leaf(_spawn_context(tree, points, K), tree, leaf, child_M, seed,
                                       radius_mult)
    return members, assign


def spawn_children(tree: MotionTree, points, per_node_children: int = 10, child_M: int = 5,
                   seed: int = 0, K: int = 4, radius_mult: float = 3.0) -> MotionTree:
    """
    Give every current leaf a basis set and children fitted to the residual
    motion of the points around it. Leaves with fewer than ``child_M`` nearby
    points are left as they are.
    """
    tree = tree.copy()
    ctx = _spawn_context(tree, points, K)
    pos, lam, T = ctx[0], ctx[-1], tree.frame_count
    for leaf in tree.leaves():
        node = tree.nodes[leaf]
        members, assign, centers = _cluster_leaf(ctx, tree, leaf, child_M, seed, radius_mult)
        if assign is None:
            continue
        # identical features leave some clusters empty; those get no basis
        used = [m for m in range(child_M) if np.any(assign == m)]
        bases = []
        for c in centers[used]:
            q = qnormalize(c[:, 3:] / lam)
            bases.append(MotionBasis([SE3.from_qt(q[t], c[t, :3]) for t in range(T)]))
        centroids = np.stack([pos[members[assign == m]].mean(0) for m in used])
        tree.basis_sets[leaf] = BasisSet(leaf, bases)

        mpos = pos[members]
        idx = farthest_point_sampling(mpos, per_node_children, seed)
        cpos = mpos[idx]
        radii = knn_median_radius(cpos, 3, fallback=node.radius)
        for p, r in zip(cpos, radii):
            tree.add_node(leaf, p, r, idw_coefficients(p, centroids))
    tree.validate()
    return tree
