"""
Hierarchical motion tree.

Every non-root node carries coefficients over the motion bases owned by its
parent; its local motion at frame ``t`` is the dual-quaternion blend of
those bases. Global motion follows the kinematic chain from the root, whose
motion is the identity at every frame. Points are deformed by blending the
global motions of their nearest leaves.

The functions here are the straightforward per-node, per-frame reference
implementation. Batched evaluation for optimization lives in
:mod:`himor.engine`.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import TreeError
from .se3 import (SE3, Quat, blend_se3, dq_blend, dq_to_se3, se3_apply, se3_compose,
                  se3_to_dq, qmul)

ROOT_ID = 0


@dataclass
class MotionBasis:
    transforms: list[SE3]

    def __len__(self):
        return len(self.transforms)


@dataclass
class BasisSet:
    owner_node_id: int
    bases: list[MotionBasis]

    @property
    def M(self) -> int:
        return len(self.bases)


@dataclass
class MotionNode:
    id: int
    parent_id: Optional[int]
    level: int
    position: np.ndarray
    radius: float
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.position = np.asarray(self.position, float).reshape(3)
        self.coefficients = np.asarray(self.coefficients, float).reshape(-1)
        self.radius = float(self.radius)


@dataclass
class OrientedPoint:
    position: np.ndarray
    orientation: Quat = field(default_factory=Quat)

    def __post_init__(self):
        self.position = np.asarray(self.position, float).reshape(3)
        if not isinstance(self.orientation, Quat):
            self.orientation = Quat.from_array(self.orientation)


@dataclass
class MotionTree:
    frame_count: int
    canonical_frame: int
    nodes: dict[int, MotionNode] = field(default_factory=dict)
    basis_sets: dict[int, BasisSet] = field(default_factory=dict)
    # None means every level is active; see freeze_levels
    active_levels: Optional[frozenset] = None

    @classmethod
    def with_root(cls, frame_count: int, canonical_frame: int = 0) -> "MotionTree":
        tree = cls(frame_count, canonical_frame)
        tree.nodes[ROOT_ID] = MotionNode(ROOT_ID, None, 0, np.zeros(3), 1.0)
        return tree

    # -- structure -----------------------------------------------------------

    @property
    def root(self) -> MotionNode:
        return self.nodes[ROOT_ID]

    def children(self, node_id: int) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.parent_id == node_id)

    def leaves(self) -> list[int]:
        parents = {n.parent_id for n in self.nodes.values()}
        return sorted(i for i in self.nodes if i not in parents and i != ROOT_ID)

    def levels(self) -> list[int]:
        return sorted({n.level for n in self.nodes.values() if n.id != ROOT_ID})

    def nodes_at_level(self, level: int) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.level == level)

    def next_id(self) -> int:
        return max(self.nodes) + 1

    def ancestors(self, node_id: int) -> list[int]:
        """Chain from the root's first child down to ``node_id`` inclusive."""
        chain = []
        cur = self.nodes[node_id]
        while cur.parent_id is not None:
            chain.append(cur.id)
            cur = self.nodes[cur.parent_id]
        return chain[::-1]

    def add_node(self, parent_id: int, position, radius: float, coefficients) -> int:
        parent = self.nodes[parent_id]
        nid = self.next_id()
        self.nodes[nid] = MotionNode(nid, parent_id, parent.level + 1, position, radius, coefficients)
        return nid

    def remove_node(self, node_id: int) -> None:
        if self.children(node_id):
            raise TreeError(f"node {node_id} still has children")
        del self.nodes[node_id]
        self.basis_sets.pop(node_id, None)

    def copy(self) -> "MotionTree":
        return copy.deepcopy(self)

    def validate(self) -> None:
        roots = [n for n in self.nodes.values() if n.parent_id is None]
        if len(roots) != 1 or roots[0].id != ROOT_ID:
            raise TreeError("tree must have exactly one root with id 0")
        if not 0 <= self.canonical_frame < self.frame_count:
            raise TreeError("canonical frame out of range")
        for n in self.nodes.values():
            if n.id == ROOT_ID:
                continue
            if n.parent_id not in self.nodes:
                raise TreeError(f"node {n.id} has missing parent {n.parent_id}")
            parent = self.nodes[n.parent_id]
            if n.level != parent.level + 1:
                raise TreeError(f"node {n.id} level {n.level} != parent level + 1")
            if not n.radius > 0:
                raise TreeError(f"node {n.id} has non-positive radius")
            bs = self.basis_sets.get(n.parent_id)
            if bs is None:
                raise TreeError(f"parent {n.parent_id} of node {n.id} owns no basis set")
            if len(n.coefficients) != bs.M:
                raise TreeError(f"node {n.id} has {len(n.coefficients)} coefficients, parent has {bs.M} bases")
        for owner, bs in self.basis_sets.items():
            if owner not in self.nodes or bs.owner_node_id != owner:
                raise TreeError(f"basis set keyed {owner} has no matching owner")
            if bs.M < 1:
                raise TreeError(f"basis set of node {owner} is empty")
            for b in bs.bases:
                if len(b) != self.frame_count:
                    raise TreeError(f"basis of node {owner} has {len(b)} frames, expected {self.frame_count}")
        # level bookkeeping already rules out cycles: levels strictly increase down every edge


# ---------------------------------------------------------------------------
# motion evaluation
# ---------------------------------------------------------------------------

def _frame_for(tree: MotionTree, node: MotionNode, t: int) -> int:
    if tree.active_levels is not None and node.level not in tree.active_levels:
        return tree.canonical_frame
    return t


def node_local_motion(tree: MotionTree, node_id: int, t: int) -> SE3:
    node = tree.nodes[node_id]
    if node.parent_id is None:
        return SE3.identity()
    t = _frame_for(tree, node, t)
    bases = tree.basis_sets[node.parent_id].bases
    return dq_to_se3(dq_blend(node.coefficients, [se3_to_dq(b.transforms[t]) for b in bases]))


def node_global_motion(tree: MotionTree, node_id: int, t: int) -> SE3:
    node = tree.nodes[node_id]
    if node.parent_id is None:
        return SE3.identity()
    return se3_compose(node_global_motion(tree, node.parent_id, t), node_local_motion(tree, node_id, t))


def knn_leaves(tree: MotionTree, position, K: int, leaves: Optional[list[int]] = None) -> list[int]:
    """K nearest leaves to ``position`` in the canonical frame, ties by id."""
    if leaves is None:
        leaves = tree.leaves()
    if not leaves:
        raise TreeError("tree has no leaves")
    pos = np.stack([tree.nodes[i].position for i in leaves])
    d2 = ((pos - np.asarray(position, float)) ** 2).sum(1)
    order = np.lexsort((np.asarray(leaves), d2))
    return [leaves[i] for i in order[:min(K, len(leaves))]]


def skinning_weights(point, tree: MotionTree, K: int) -> list[tuple[int, float]]:
    ids = knn_leaves(tree, point, K)
    point = np.asarray(point, float)
    raw = np.array([
        np.exp(-((point - tree.nodes[i].position) ** 2).sum() / (2.0 * tree.nodes[i].radius))
        for i in ids
    ])
    if np.all(raw < 1e-300):
        return [(ids[0], 1.0)] + [(i, 0.0) for i in ids[1:]]
    w = raw / raw.sum()
    return list(zip(ids, w.tolist()))


def point_motion(tree: MotionTree, position, t: int, K: int) -> SE3:
    weighted = skinning_weights(position, tree, K)
    ids = [i for i, _ in weighted]
    w = [wk for _, wk in weighted]
    return blend_se3(w, [node_global_motion(tree, i, t) for i in ids])


def deform_point(tree: MotionTree, p: OrientedPoint, t: int, K: int) -> OrientedPoint:
    T = point_motion(tree, p.position, t, K)
    return OrientedPoint(se3_apply(T, p.position), Quat.from_array(qmul(T.q, p.orientation.as_array())))


def point_trajectory(tree: MotionTree, p: OrientedPoint, K: int) -> np.ndarray:
    return np.stack([deform_point(tree, p, t, K).position for t in range(tree.frame_count)])


def node_trajectory(tree: MotionTree, node_id: int) -> np.ndarray:
    """Canonical node position carried along by the node's own global motion."""
    x = tree.nodes[node_id].position
    return np.stack([se3_apply(node_global_motion(tree, node_id, t), x) for t in range(tree.frame_count)])


def freeze_levels(tree: MotionTree, active_levels: Iterable[int]) -> MotionTree:
    """
    View of ``tree`` where levels outside ``active_levels`` hold their local
    motion fixed at the canonical frame. Node and basis objects are shared
    with the original tree.
    """
    view = copy.copy(tree)
    view.active_levels = frozenset(int(a) for a in active_levels)
    return view
