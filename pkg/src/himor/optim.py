"""Adam updates, the staged fitting loop and finite-difference gradient checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from . import engine as engine_mod
from .config import FitConfig, LossWeights
from .densify import default_threshold, densify_by_curve_distance, refine_by_gradient
from .engine import (DTYPE, GROUP_BASIS, GROUP_COEF, GROUP_POSITION, GROUP_RADIUS, Engine,
                     ParamStore)
from .errors import NonFiniteLoss
from .initialize import init_first_level, spawn_children
from .se3 import SE3
from .tracks import TrackSet
from .tree import BasisSet, MotionBasis, MotionTree

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("step", "stage", "total", "track", "rigid", "accel_bases", "accel_tracks",
                   "radius", "num_nodes")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(torch.zeros(n, dtype=DTYPE), torch.zeros(n, dtype=DTYPE), 0)

    def remap(self, old: ParamStore, new: ParamStore) -> "AdamState":
        """Carry moments over to a new layout for blocks that kept their shape."""
        m = torch.zeros(len(new), dtype=DTYPE)
        v = torch.zeros(len(new), dtype=DTYPE)
        prev = {b.key: b for b in old.blocks}
        for b in new.blocks:
            o = prev.get(b.key)
            if o is not None and o.shape == b.shape:
                m[b.start:b.start + b.size] = self.m[o.start:o.start + o.size]
                v[b.start:b.start + b.size] = self.v[o.start:o.start + o.size]
        return AdamState(m, v, self.step)


def learning_rates(store: ParamStore, config: FitConfig) -> torch.Tensor:
    table = np.zeros(4)
    table[GROUP_BASIS] = config.lr_basis
    table[GROUP_POSITION] = config.lr_position
    table[GROUP_RADIUS] = config.lr_radius
    table[GROUP_COEF] = config.lr_coefficients
    return torch.tensor(table[store.group], dtype=DTYPE)


def adam_step(store: ParamStore, grad, state: AdamState, config: FitConfig,
              trainable: Optional[np.ndarray] = None) -> tuple[torch.Tensor, AdamState]:
    """
    One bias-corrected Adam update with per-group learning rates.

    Scalars outside ``trainable`` keep their value and moments. Quaternion
    blocks that moved are renormalized and radii are kept above
    ``config.min_radius``. Returns the new parameter vector and state.
    """
    b1, b2 = config.adam_betas
    g = torch.as_tensor(grad, dtype=DTYPE)
    mask = torch.ones(len(store), dtype=torch.bool) if trainable is None else torch.from_numpy(trainable)
    step = state.step + 1
    m = torch.where(mask, b1 * state.m + (1 - b1) * g, state.m)
    v = torch.where(mask, b2 * state.v + (1 - b2) * g * g, state.v)
    mhat = m / (1 - b1 ** step)
    vhat = v / (1 - b2 ** step)
    upd = learning_rates(store, config) * mhat / (torch.sqrt(vhat) + config.adam_eps)
    theta = store.theta.detach() - torch.where(mask, upd, torch.zeros_like(upd))
    if len(store.quat_index):
        qi = torch.from_numpy(store.quat_index)
        q = theta[qi]
        moved = (q != store.theta.detach()[qi]).any(1, keepdim=True)
        qn = q / torch.sqrt((q * q).sum(1, keepdim=True))
        theta[qi] = torch.where(moved, qn, q)
    if len(store.radius_index):
        ri = torch.from_numpy(store.radius_index)
        theta[ri] = torch.clamp(theta[ri], min=config.min_radius)
    return theta, AdamState(m, v, step)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    tree: MotionTree
    history: list[dict] = field(default_factory=list)


def sample_frames(rng: np.random.Generator, T: int, batch: int) -> list[int]:
    if batch >= T:
        return list(range(T))
    return sorted(int(f) for f in rng.choice(T, size=batch, replace=False))


class _Stage:
    """Optimizer state for one stage, rebuilt whenever the topology changes."""

    def __init__(self, tree, points, tracks, config, trainable_levels):
        self.points = points
        self.tracks = tracks
        self.config = config
        self.levels = trainable_levels
        self.state = None
        self.rebuild(tree)

    def rebuild(self, tree):
        old = getattr(self, "engine", None)
        self.engine = Engine(tree, self.points, K=self.config.skin_knn, tracks=self.tracks,
                             rigidity_knn=self.config.rigidity_knn)
        store = self.engine.store
        lv_ok = np.ones(len(store), dtype=bool) if self.levels is None else np.isin(store.level, list(self.levels))
        self.trainable = lv_ok & ~store.canonical_mask
        if self.state is None:
            self.state = AdamState.zeros(len(store))
        else:
            self.state = self.state.remap(old.store, store)
        self.coef_blocks = [(b.key[1], b.start, b.size) for b in store.blocks if b.key[0] == "coefficients"]
        self.grad_acc = {nid: 0.0 for nid, _, _ in self.coef_blocks}
        self.grad_count = 0

    def tree(self) -> MotionTree:
        t = self.engine.tree
        self.engine.store.write_to(t)
        return t

    def step(self, frames, weights, index, stage, track_grad_stats=False) -> dict:
        store = self.engine.store
        theta = store.theta.detach().requires_grad_(True)
        terms = self.engine.total_loss(frames, weights, theta)
        total = float(terms.total.detach())
        if not math.isfinite(total):
            raise NonFiniteLoss(index, total)
        if track_grad_stats:
            (gt,) = torch.autograd.grad(weights.track * terms.track, theta, retain_graph=True,
                                        allow_unused=True)
            if gt is not None:
                for nid, s, n in self.coef_blocks:
                    self.grad_acc[nid] += float(torch.linalg.vector_norm(gt[s:s + n]))
            self.grad_count += 1
        (grad,) = torch.autograd.grad(terms.total, theta, allow_unused=True)
        if grad is None:
            grad = torch.zeros_like(theta)
        store.theta, self.state = adam_step(store, grad, self.state, self.config, self.trainable)
        row = {"step": index, "stage": stage, **terms.as_floats(),
               "num_nodes": len(self.engine.tree.nodes) - 1}
        return row

    def grad_stats(self) -> dict:
        n = max(self.grad_count, 1)
        return {k: v / n for k, v in self.grad_acc.items()}


def fit(tracks: TrackSet, config: FitConfig = None, weights: LossWeights = None, seed: int = None,
        tree: MotionTree = None, progress: Optional[Callable[[dict], None]] = None) -> FitResult:
    """
    Two-stage fit of a motion tree to observed tracks.

    Stage 1 trains the first level (initialized from the tracks unless a tree
    is given) with periodic curve-distance densification. Stage 2 spawns a
    second level, raises first-level rigidity and trains every level with
    periodic gradient-based refinement.
    """
    config = FitConfig() if config is None else config
    weights = config.weights if weights is None else weights
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    T = tracks.frame_count
    if tree is None:
        tree = init_first_level(tracks, config.num_bases, config.num_nodes, seed)
    else:
        tree = tree.copy()
    points = tracks.positions[:, tree.canonical_frame]
    threshold = default_threshold(points, config.densify_threshold_ratio)
    history: list[dict] = []
    index = 0

    def emit(row):
        history.append(row)
        if progress is not None:
            progress(row)

    already_deep = max(tree.levels(), default=1) >= 2
    if config.stage1_steps > 0:
        stage = _Stage(tree, points, tracks, config, {1})
        w1 = weights.activated() if already_deep else weights
        for k in range(config.stage1_steps):
            if k > 0 and k % config.densify_every == 0 and not already_deep:
                before = stage.tree()
                after = densify_by_curve_distance(before, points, config.skin_knn, threshold,
                                                  seed + index, config.points_per_node)
                if len(after.nodes) != len(before.nodes):
                    stage.rebuild(after)
            emit(stage.step(sample_frames(rng, T, config.batch_frames), w1, index, 1))
            index += 1
        tree = stage.tree()

    if config.stage2_steps > 0 and config.max_levels >= 2:
        if not already_deep:
            tree = spawn_children(tree, points, config.children_per_node, config.child_bases, seed,
                                  config.skin_knn, config.spawn_radius_mult)
        stage = _Stage(tree, points, tracks, config, config.stage2_levels)
        w2 = weights.activated()
        for k in range(config.stage2_steps):
            if k > 0 and k % config.densify_every == 0:
                before = stage.tree()
                after = refine_by_gradient(before, _leaf_stats(before, stage.grad_stats()),
                                           config.refine_add_thresh, config.refine_prune_thresh,
                                           points, config.skin_knn)
                if sorted(after.nodes) != sorted(before.nodes):
                    stage.rebuild(after)
                else:
                    stage.grad_acc = {k2: 0.0 for k2 in stage.grad_acc}
                    stage.grad_count = 0
            emit(stage.step(sample_frames(rng, T, config.batch_frames), w2, index, 2, True))
            index += 1
        tree = stage.tree()
    tree.validate()
    return FitResult(tree, history)


def _leaf_stats(tree: MotionTree, stats: dict) -> dict:
    return {leaf: stats.get(leaf, 0.0) for leaf in tree.leaves()}


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradcheckReport:
    seed: int
    num_params: int
    max_rel_error: float
    max_abs_error: float
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def _random_unit_quats(rng, shape):
    q = rng.normal(size=shape + (4,))
    q[..., 0] += 2.0
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def random_instance(seed: int, max_nodes: int = 10, max_bases: int = 3, max_frames: int = 5):
    """Small random two-level tree plus tracks for gradient checking."""
    rng = np.random.default_rng(seed)
    T = int(rng.integers(3, max_frames + 1))
    tree = MotionTree.with_root(T, int(rng.integers(T)))

    def basis_set(owner, M):
        q = _random_unit_quats(rng, (M, T))
        t = rng.normal(scale=0.3, size=(M, T, 3))
        return BasisSet(owner, [MotionBasis([SE3.from_qt(q[m, f], t[m, f]) for f in range(T)])
                                for m in range(M)])

    n1 = int(rng.integers(4, 7))
    n2 = int(rng.integers(0, max_nodes - n1 + 1))
    M0 = int(rng.integers(2, max_bases + 1))
    tree.basis_sets[0] = basis_set(0, M0)
    first = []
    for _ in range(n1):
        first.append(tree.add_node(0, rng.uniform(-1, 1, 3), rng.uniform(0.3, 2.0),
                                   rng.uniform(0.1, 1.0, M0)))
    parents = sorted(set(int(p) for p in rng.choice(first, size=min(2, n1), replace=False)))
    if n2 > 0:
        for p in parents:
            tree.basis_sets[p] = basis_set(p, int(rng.integers(1, max_bases + 1)))
        for k in range(n2):
            p = parents[k % len(parents)]
            M = tree.basis_sets[p].M
            tree.add_node(p, tree.nodes[p].position + rng.normal(scale=0.4, size=3),
                          rng.uniform(0.3, 2.0), rng.uniform(0.1, 1.0, M))
        for p in parents:
            if not tree.children(p):
                del tree.basis_sets[p]
    tree.validate()
    P = int(rng.integers(3, 9))
    positions = rng.uniform(-1, 1, (P, T, 3))
    vis = rng.random((P, T)) > 0.2
    vis[:, 0] = True
    tracks = TrackSet(positions, vis)
    batch = sorted(int(f) for f in rng.choice(T, size=int(rng.integers(3, T + 1)), replace=False))
    return tree, tracks, batch


def gradcheck(seed: int, h: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-8,
              weights: LossWeights = None, K: int = 3) -> GradcheckReport:
    """
    Compare the reverse-mode gradient of the total loss with central finite
    differences on every scalar parameter of a random instance.
    """
    tree, tracks, batch = random_instance(seed)
    if weights is None:
        weights = LossWeights(rigid_per_level=[0.5, 0.7])
    pts = tracks.positions[:, tree.canonical_frame]
    eng = Engine(tree, pts, K=K, tracks=tracks, rigidity_knn=3)
    theta0 = eng.store.theta.detach().clone()
    th = theta0.clone().requires_grad_(True)
    (grad,) = torch.autograd.grad(eng.total_loss(batch, weights, th).total, th)
    grad = grad.numpy()
    labels = eng.store.labels()
    n = len(theta0)
    step = torch.eye(n, dtype=DTYPE) * h

    def loss(th):
        return eng.total_loss(batch, weights, th).total

    prev = engine_mod.CHECK_DEGENERATE
    engine_mod.CHECK_DEGENERATE = False
    try:
        with torch.no_grad():
            batched = torch.func.vmap(loss)
            fd = ((batched(theta0 + step) - batched(theta0 - step)) / (2 * h)).numpy()
    finally:
        engine_mod.CHECK_DEGENERATE = prev
    fails, max_rel, max_abs = [], 0.0, 0.0
    for i in range(n):
        err = abs(fd[i] - grad[i])
        rel = err / max(abs(fd[i]), abs(grad[i]), 1e-300)
        max_abs = max(max_abs, err)
        if err > atol:
            max_rel = max(max_rel, rel)
            if rel >= rtol:
                fails.append(f"{labels[i]}: analytic {grad[i]:.10g} vs fd {fd[i]:.10g}")
    return GradcheckReport(seed, len(theta0), max_rel, max_abs, fails)
