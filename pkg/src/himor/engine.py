"""
Batched, differentiable evaluation of a motion tree.

A :class:`ParamStore` flattens every optimizable scalar of a
:class:`~himor.tree.MotionTree` into one float64 vector; an :class:`Engine`
evaluates node motions, point deformations and all loss terms from that
vector with torch so that gradients come from reverse-mode accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import DegenerateBlend, InvalidBinding, TreeError
from .se3 import SE3
from .tree import ROOT_ID, BasisSet, MotionBasis, MotionTree

DTYPE = torch.float64
_NORM_EPS = 1e-12
# data-dependent check; switched off while evaluating under torch.func.vmap
CHECK_DEGENERATE = True

GROUP_BASIS, GROUP_POSITION, GROUP_RADIUS, GROUP_COEF = range(4)
GROUP_NAMES = ("basis", "position", "radius", "coefficients")


# ---------------------------------------------------------------------------
# torch quaternion helpers
# ---------------------------------------------------------------------------

def _qmul_table():
    # C[i, j] = e_i * e_j for the quaternion basis (1, i, j, k)
    signs = np.zeros((4, 4, 4))
    mult = {(0, 0): (0, 1), (0, 1): (1, 1), (0, 2): (2, 1), (0, 3): (3, 1),
            (1, 0): (1, 1), (1, 1): (0, -1), (1, 2): (3, 1), (1, 3): (2, -1),
            (2, 0): (2, 1), (2, 1): (3, -1), (2, 2): (0, -1), (2, 3): (1, 1),
            (3, 0): (3, 1), (3, 1): (2, 1), (3, 2): (1, -1), (3, 3): (0, -1)}
    for (i, j), (k, s) in mult.items():
        signs[i, j, k] = s
    return torch.tensor(signs.reshape(16, 4), dtype=DTYPE)


_QMUL = _qmul_table()


def tqmul(a, b):
    """Hamilton product as one outer product and a 16x4 matmul."""
    outer = (a[..., :, None] * b[..., None, :]).flatten(-2)
    return outer @ _QMUL


def tqconj(q):
    return torch.cat([q[..., :1], -q[..., 1:]], -1)


def tqrotate(q, v):
    w = q[..., :1]
    u = q[..., 1:]
    uv = torch.cross(u, v, dim=-1)
    return v + 2.0 * (w * uv + torch.cross(u, uv, dim=-1))


def safe_norm(v):
    """Euclidean norm with a zero (not NaN) gradient at the origin."""
    return torch.sqrt((v * v).sum(-1) + _NORM_EPS ** 2) - _NORM_EPS


def qt_to_dq(q, t):
    zero = torch.zeros_like(t[..., :1])
    return q, 0.5 * tqmul(torch.cat([zero, t], -1), q)


def blend_dq(weights, real, dual):
    """
    Blend dual quaternions along axis 1 of ``real``/``dual`` (shape
    ``[n, k, f, 4]``) with ``weights`` of shape ``[n, k]``. Returns the
    blended rigid motion as ``(q, t)`` with shapes ``[n, f, 4]``/``[n, f, 3]``.
    """
    with torch.no_grad():
        pivot = weights.abs().argmax(1)
        ref = real[torch.arange(real.shape[0]), pivot]              # [n, f, 4]
        sign = torch.where((real * ref[:, None]).sum(-1) < 0, -1.0, 1.0).to(DTYPE)
    ws = weights[:, :, None, None] * sign[..., None]
    r = (ws * real).sum(1)
    d = (ws * dual).sum(1)
    n2 = (r * r).sum(-1, keepdim=True)
    if CHECK_DEGENERATE and n2.numel() and float(n2.detach().min()) < 1e-24:
        raise DegenerateBlend("blended dual quaternion has vanishing real part")
    nrm = torch.sqrt(n2)
    q = r / nrm
    t = 2.0 * tqmul(d, tqconj(r))[..., 1:] / n2
    return q, t


# ---------------------------------------------------------------------------
# parameter store
# ---------------------------------------------------------------------------

@dataclass
class Block:
    key: tuple
    group: int
    level: int
    start: int
    shape: tuple

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class ParamStore:
    """
    Flat view of all optimizable scalars of a tree.

    Ordering: ascending node id; for each node, its owned basis set
    (basis index, frame, then ``w x y z tx ty tz``) followed by its
    position, radius and coefficients.
    """

    theta: torch.Tensor
    blocks: list[Block]
    group: np.ndarray            # per-scalar parameter group
    level: np.ndarray            # per-scalar motion level the scalar drives
    canonical_mask: np.ndarray   # True for basis scalars at the canonical frame
    quat_index: np.ndarray       # [n_quats, 4] indices of quaternion components
    radius_index: np.ndarray

    @classmethod
    def from_tree(cls, tree: MotionTree) -> "ParamStore":
        values, blocks = [], []
        start = 0
        for nid in sorted(tree.nodes):
            node = tree.nodes[nid]
            bs = tree.basis_sets.get(nid)
            if bs is not None:
                arr = np.array([[np.concatenate([tr.q, tr.translation]) for tr in b.transforms]
                                for b in bs.bases])
                blocks.append(Block(("basis", nid), GROUP_BASIS, node.level + 1, start, arr.shape))
                values.append(arr.ravel())
                start += arr.size
            if nid == ROOT_ID:
                continue
            for name, grp, val in (("position", GROUP_POSITION, node.position),
                                   ("radius", GROUP_RADIUS, np.array([node.radius])),
                                   ("coefficients", GROUP_COEF, node.coefficients)):
                blocks.append(Block((name, nid), grp, node.level, start, val.shape))
                values.append(np.asarray(val, float).ravel())
                start += val.size
        flat = np.concatenate(values) if values else np.zeros(0)
        group = np.zeros(start, dtype=np.int64)
        level = np.zeros(start, dtype=np.int64)
        canon = np.zeros(start, dtype=bool)
        quats, radii = [], []
        for b in blocks:
            sl = slice(b.start, b.start + b.size)
            group[sl] = b.group
            level[sl] = b.level
            if b.group == GROUP_BASIS:
                idx = np.arange(b.start, b.start + b.size).reshape(b.shape)
                canon[idx[:, tree.canonical_frame].ravel()] = True
                quats.append(idx[..., :4].reshape(-1, 4))
            elif b.group == GROUP_RADIUS:
                radii.append(b.start)
        return cls(
            theta=torch.tensor(flat, dtype=DTYPE),
            blocks=blocks,
            group=group,
            level=level,
            canonical_mask=canon,
            quat_index=np.concatenate(quats) if quats else np.zeros((0, 4), dtype=np.int64),
            radius_index=np.array(radii, dtype=np.int64),
        )

    def __len__(self):
        return self.theta.numel()

    def block(self, key) -> Block:
        for b in self.blocks:
            if b.key == key:
                return b
        raise KeyError(key)

    def view(self, key, theta: Optional[torch.Tensor] = None) -> torch.Tensor:
        theta = self.theta if theta is None else theta
        b = self.block(key)
        return theta[b.start:b.start + b.size].reshape(b.shape)

    def labels(self) -> list[str]:
        """Human-readable name of every scalar, in storage order."""
        out = []
        for b in self.blocks:
            for idx in np.ndindex(*b.shape):
                out.append(f"{b.key[0]}[{b.key[1]}]{list(idx)}")
        return out

    def write_to(self, tree: MotionTree) -> None:
        """Copy current values back into ``tree`` (quaternions renormalized)."""
        vals = self.theta.detach().cpu().numpy()
        for b in self.blocks:
            arr = vals[b.start:b.start + b.size].reshape(b.shape)
            kind, nid = b.key
            if kind == "basis":
                tree.basis_sets[nid] = BasisSet(nid, [
                    MotionBasis([SE3.from_qt(f[:4], f[4:]) for f in basis]) for basis in arr])
            elif kind == "position":
                tree.nodes[nid].position = arr.copy()
            elif kind == "radius":
                tree.nodes[nid].radius = float(arr[0])
            else:
                tree.nodes[nid].coefficients = arr.copy()


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

@dataclass
class Terms:
    total: torch.Tensor
    track: torch.Tensor
    rigid: torch.Tensor
    accel_bases: torch.Tensor
    accel_tracks: torch.Tensor
    radius: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in
                ("total", "track", "rigid", "accel_bases", "accel_tracks", "radius")}


def rigidity_pairs(frames: Sequence[int], max_gap: int = 4) -> list[tuple[int, int]]:
    frames = sorted(set(int(f) for f in frames))
    return [(a, b) for i, a in enumerate(frames) for b in frames[i + 1:] if b - a <= max_gap]


def accel_triples(frames: Sequence[int], T: int) -> list[tuple[int, int, int]]:
    frames = sorted(set(int(f) for f in frames))
    return [(t - 1, t, t + 1) for t in frames if 1 <= t <= T - 2]


class Engine:
    """
    Differentiable evaluator bound to one tree topology.

    Skinning neighbours of the supervised points and the rigidity neighbour
    graph are computed once at construction from the tree's current state and
    stay fixed until a new engine is built.
    """

    def __init__(self, tree: MotionTree, points: Optional[np.ndarray] = None, K: int = 4,
                 tracks=None, bindings: Optional[np.ndarray] = None, rigidity_knn: int = 5,
                 rigidity_graph: Optional[dict] = None):
        tree.validate()
        self.tree = tree
        self.T = tree.frame_count
        self.canonical = tree.canonical_frame
        self.K = K
        self.store = ParamStore.from_tree(tree)
        self._build_layout()
        self.points = torch.zeros((0, 3), dtype=DTYPE)
        self.knn = torch.zeros((0, 1), dtype=torch.long)
        if points is not None:
            self.set_points(points)
        self.obs = self.vis = None
        if tracks is not None:
            self.set_tracks(tracks, bindings)
        if rigidity_graph is None:
            rigidity_graph = self.build_rigidity_graph(rigidity_knn)
        self.rigidity_graph = rigidity_graph

    # -- layout ------------------------------------------------------------------

    def _build_layout(self):
        tree, store = self.tree, self.store
        order = [ROOT_ID]
        for lvl in tree.levels():
            order += tree.nodes_at_level(lvl)
        self.order = order
        self.index = {nid: i for i, nid in enumerate(order)}
        self.levels = np.array([tree.nodes[n].level for n in order])
        self.level_slices = []
        for lvl in tree.levels():
            idx = np.nonzero(self.levels == lvl)[0]
            self.level_slices.append((lvl, int(idx[0]), int(idx[-1]) + 1))
        self.parent = torch.tensor([0] + [self.index[tree.nodes[n].parent_id] for n in order[1:]])

        owners = sorted(tree.basis_sets)
        offsets, B = {}, 0
        for o in owners:
            offsets[o] = B
            B += tree.basis_sets[o].M
        self.B = B
        dummy = len(store)  # index of an appended constant zero
        n = len(order)
        Mmax = max([tree.basis_sets[o].M for o in owners] + [1])
        bq = np.zeros((max(B, 1), self.T, 4), dtype=np.int64) + dummy
        bt = np.zeros((max(B, 1), self.T, 3), dtype=np.int64) + dummy
        for o in owners:
            blk = store.block(("basis", o))
            idx = np.arange(blk.start, blk.start + blk.size).reshape(blk.shape)
            bq[offsets[o]:offsets[o] + blk.shape[0]] = idx[..., :4]
            bt[offsets[o]:offsets[o] + blk.shape[0]] = idx[..., 4:]
        pos = np.full((n, 3), dummy, dtype=np.int64)
        rad = np.full(n, dummy, dtype=np.int64)
        coef = np.full((n, Mmax), dummy, dtype=np.int64)
        bidx = np.zeros((n, Mmax), dtype=np.int64)
        for i, nid in enumerate(order):
            if nid == ROOT_ID:
                continue
            p = store.block(("position", nid))
            pos[i] = np.arange(p.start, p.start + 3)
            rad[i] = store.block(("radius", nid)).start
            c = store.block(("coefficients", nid))
            coef[i, :c.size] = np.arange(c.start, c.start + c.size)
            par = tree.nodes[nid].parent_id
            bidx[i, :c.size] = offsets[par] + np.arange(c.size)
        self._bq = torch.from_numpy(bq)
        self._bt = torch.from_numpy(bt)
        self._pos = torch.from_numpy(pos)
        self._rad = torch.from_numpy(rad)
        self._coef = torch.from_numpy(coef)
        self._bidx = torch.from_numpy(bidx)
        self.leaf_index = np.array([self.index[i] for i in tree.leaves()], dtype=np.int64)
        if tree.active_levels is None:
            self.frozen = np.zeros(n, dtype=bool)
        else:
            self.frozen = np.array([lvl not in tree.active_levels for lvl in self.levels])
            self.frozen[0] = False

    def _ext(self, theta):
        return torch.cat([theta, theta.new_zeros(1)])

    def node_positions(self, theta=None) -> torch.Tensor:
        theta = self.store.theta if theta is None else theta
        return self._ext(theta)[self._pos]

    def node_radii(self, theta=None) -> torch.Tensor:
        theta = self.store.theta if theta is None else theta
        return self._ext(theta)[self._rad]

    # -- supervision -------------------------------------------------------------

    def set_points(self, points):
        pts = np.asarray(points, float).reshape(-1, 3)
        self.points = torch.tensor(pts, dtype=DTYPE)
        if len(self.leaf_index) == 0:
            raise TreeError("tree has no leaves")
        leaf_pos = self.node_positions().detach().numpy()[self.leaf_index]
        leaf_ids = np.array([self.order[i] for i in self.leaf_index])
        k = min(self.K, len(self.leaf_index))
        knn = np.zeros((len(pts), k), dtype=np.int64)
        for p in range(len(pts)):
            d2 = ((leaf_pos - pts[p]) ** 2).sum(1)
            knn[p] = self.leaf_index[np.lexsort((leaf_ids, d2))[:k]]
        self.knn = torch.from_numpy(knn)

    def set_tracks(self, tracks, bindings=None):
        n = tracks.num_tracks
        if bindings is None:
            bindings = np.arange(len(self.points))
        bindings = np.asarray(bindings, dtype=np.int64)
        if len(bindings) != len(self.points):
            raise InvalidBinding("one binding per supervised point is required")
        if np.any(bindings < 0) or np.any(bindings >= n):
            raise InvalidBinding("binding refers to a missing track")
        self.obs = torch.tensor(tracks.positions[bindings], dtype=DTYPE)
        self.vis = torch.tensor(tracks.visibility[bindings], dtype=torch.bool)

    def build_rigidity_graph(self, k: int) -> dict:
        """Per level: for each node its ``k`` nearest same-level nodes by curve distance."""
        graph = {}
        if k <= 0:
            return graph
        with torch.no_grad():
            _, _, x = self.node_motions(list(range(self.T)))
        x = x.numpy()
        for lvl, s, e in self.level_slices:
            m = e - s
            if m < 2:
                continue
            traj = x[s:e]
            cd = np.linalg.norm(traj[:, None] - traj[None], axis=-1).max(-1)
            np.fill_diagonal(cd, np.inf)
            kk = min(k, m - 1)
            ii, jj = [], []
            for a in range(m):
                nb = np.lexsort((np.arange(m), cd[a]))[:kk]
                ii += [s + a] * kk
                jj += (s + nb).tolist()
            graph[lvl] = (np.array(ii, dtype=np.int64), np.array(jj, dtype=np.int64))
        return graph

    # -- evaluation --------------------------------------------------------------

    def node_motions(self, frames: Sequence[int], theta=None):
        """
        Global motion of every node (engine order) at ``frames``.
        Returns ``(q [n,f,4], t [n,f,3], x [n,f,3])`` where ``x`` is the
        node position carried by its own motion.
        """
        theta = self.store.theta if theta is None else theta
        ext = self._ext(theta)
        frames = list(frames)
        nf = len(frames)
        use_canon = bool(self.frozen.any())
        eval_frames = frames + ([self.canonical] if use_canon else [])
        fidx = torch.tensor(eval_frames, dtype=torch.long)
        q_raw = ext[self._bq[:, fidx]]
        bt = ext[self._bt[:, fidx]]
        bq = q_raw / torch.sqrt((q_raw * q_raw).sum(-1, keepdim=True))
        breal, bdual = qt_to_dq(bq, bt)                      # [B, f, 4]
        coef = ext[self._coef]                                # [n, Mmax]
        pos = ext[self._pos]

        n = len(self.order)
        ident_q = torch.zeros((1, nf, 4), dtype=DTYPE)
        ident_q[..., 0] = 1.0
        gq, gt = [ident_q], [torch.zeros((1, nf, 3), dtype=DTYPE)]
        for lvl, s, e in self.level_slices:
            bi = self._bidx[s:e]
            lq, lt = blend_dq(coef[s:e], breal[bi], bdual[bi])
            if use_canon:
                fz = torch.from_numpy(self.frozen[s:e])[:, None, None]
                lq = torch.where(fz, lq[:, -1:].expand_as(lq), lq)
                lt = torch.where(fz, lt[:, -1:].expand_as(lt), lt)
                lq, lt = lq[:, :nf], lt[:, :nf]
            allq, allt = torch.cat(gq), torch.cat(gt)
            par = self.parent[s:e]
            pq, pt = allq[par], allt[par]
            gq.append(tqmul(pq, lq))
            gt.append(tqrotate(pq, lt) + pt)
        q = torch.cat(gq)
        t = torch.cat(gt)
        assert q.shape[0] == n
        x = tqrotate(q, pos[:, None].expand(-1, nf, -1)) + t
        return q, t, x

    def point_motions(self, frames: Sequence[int], theta=None, node_state=None):
        theta = self.store.theta if theta is None else theta
        if node_state is None:
            node_state = self.node_motions(frames, theta)
        q, t, _ = node_state
        ext = self._ext(theta)
        lp = ext[self._pos][self.knn]                          # [P, k, 3]
        lr = ext[self._rad][self.knn]                          # [P, k]
        d2 = ((self.points[:, None] - lp) ** 2).sum(-1)
        w = torch.softmax(-d2 / (2.0 * lr), dim=1)
        real, dual = qt_to_dq(q[self.knn], t[self.knn])        # [P, k, f, 4]
        return blend_dq(w, real, dual)

    def point_positions(self, frames: Sequence[int], theta=None, node_state=None):
        pq, pt = self.point_motions(frames, theta, node_state)
        return tqrotate(pq, self.points[:, None].expand(-1, pq.shape[1], -1)) + pt

    # -- loss terms ------------------------------------------------------------

    def loss_track(self, frames, theta=None, positions=None, fpos=None):
        frames = sorted(set(int(f) for f in frames))
        if positions is None:
            positions = self.point_positions(frames, theta)
            fpos = {f: i for i, f in enumerate(frames)}
        if self.obs is None or len(frames) == 0:
            return positions.sum() * 0.0
        cols = torch.tensor([fpos[f] for f in frames])
        fr = torch.tensor(frames)
        err = positions[:, cols] - self.obs[:, fr]
        vis = self.vis[:, fr]
        count = int(vis.sum())
        if count == 0:
            return positions.sum() * 0.0
        return ((err * err).sum(-1) * vis).sum() / count

    def loss_rigidity(self, frame_pairs, weights_per_level, theta=None, node_state=None, fpos=None):
        theta = self.store.theta if theta is None else theta
        if node_state is None:
            frames = sorted({f for p in frame_pairs for f in p})
            node_state = self.node_motions(frames, theta)
            fpos = {f: i for i, f in enumerate(frames)}
        q, t, x = node_state
        total = theta.sum() * 0.0
        if not frame_pairs:
            return total
        a = torch.tensor([fpos[p[0]] for p in frame_pairs])
        b = torch.tensor([fpos[p[1]] for p in frame_pairs])
        for lvl, (ii, jj) in sorted(self.rigidity_graph.items()):
            wl = _level_weight(weights_per_level, lvl)
            if wl == 0.0:
                continue
            ii = torch.from_numpy(ii)
            jj = torch.from_numpy(jj)
            xi_a, xi_b = x[ii][:, a], x[ii][:, b]
            xj_a, xj_b = x[jj][:, a], x[jj][:, b]
            dist = (safe_norm(xi_a - xj_a) - safe_norm(xi_b - xj_b)).abs()
            qa, qb = tqconj(q[jj][:, a]), tqconj(q[jj][:, b])
            la = tqrotate(qa, xi_a - t[jj][:, a])
            lb = tqrotate(qb, xi_b - t[jj][:, b])
            rel = safe_norm(la - lb)
            total = total + wl * (dist + rel).sum() / len(frame_pairs)
        return total

    def reg_basis_acceleration(self, theta=None):
        theta = self.store.theta if theta is None else theta
        if self.T < 3 or self.B == 0:
            return theta.sum() * 0.0
        ext = self._ext(theta)
        q = ext[self._bq]
        t = ext[self._bt]
        with torch.no_grad():
            signs = [torch.ones_like(q[:, 0, 0])]
            prev = q[:, 0]
            for f in range(1, self.T):
                s = torch.where((q[:, f] * prev).sum(-1) < 0, -1.0, 1.0).to(DTYPE)
                signs.append(s)
                prev = q[:, f] * s[:, None]
            sign = torch.stack(signs, 1)
        p = torch.cat([t, q * sign[..., None]], -1)
        acc = p[:, 2:] - 2.0 * p[:, 1:-1] + p[:, :-2]
        return (acc * acc).sum(-1).mean()

    def reg_track_acceleration(self, triples, theta=None, positions=None, fpos=None):
        theta = self.store.theta if theta is None else theta
        if not triples or len(self.points) == 0:
            return theta.sum() * 0.0
        if positions is None:
            frames = sorted({f for tr in triples for f in tr})
            positions = self.point_positions(frames, theta)
            fpos = {f: i for i, f in enumerate(frames)}
        i0 = torch.tensor([fpos[a] for a, _, _ in triples])
        i1 = torch.tensor([fpos[b] for _, b, _ in triples])
        i2 = torch.tensor([fpos[c] for _, _, c in triples])
        acc = positions[:, i2] - 2.0 * positions[:, i1] + positions[:, i0]
        return (acc * acc).sum(-1).mean()

    def reg_radius(self, theta=None):
        theta = self.store.theta if theta is None else theta
        pos = self.node_positions(theta)
        rad = self.node_radii(theta)
        terms = []
        for lvl, s, e in self.level_slices:
            if e - s < 4:
                continue
            p = pos[s:e]
            with torch.no_grad():
                d = ((p[:, None] - p[None]) ** 2).sum(-1)
                d = torch.where(torch.eye(e - s, dtype=torch.bool), float("inf"), d)
                nb = torch.argsort(d, dim=1, stable=True)[:, :3]
            avg = safe_norm(p[:, None] - p[nb]).mean(1)
            terms.append(torch.clamp(rad[s:e] - avg, min=0.0) ** 2)
        if not terms:
            return theta.sum() * 0.0
        return torch.cat(terms).mean()

    def total_loss(self, frames, weights, theta=None) -> Terms:
        theta = self.store.theta if theta is None else theta
        frames = sorted(set(int(f) for f in frames))
        pairs = rigidity_pairs(frames)
        triples = accel_triples(frames, self.T)
        all_frames = sorted(set(frames) | {f for tr in triples for f in tr})
        fpos = {f: i for i, f in enumerate(all_frames)}
        zero = theta.sum() * 0.0
        need_points = len(self.points) > 0
        node_state = self.node_motions(all_frames, theta) if all_frames else None
        positions = None
        if need_points and all_frames:
            positions = self.point_positions(all_frames, theta, node_state)
        track = self.loss_track(frames, theta, positions, fpos) if positions is not None else zero
        rigid = (self.loss_rigidity(pairs, weights.rigid_per_level, theta, node_state, fpos)
                 if node_state is not None else zero)
        accel_b = self.reg_basis_acceleration(theta)
        accel_t = (self.reg_track_acceleration(triples, theta, positions, fpos)
                   if positions is not None else zero)
        radius = self.reg_radius(theta)
        total = (weights.track * track + rigid + weights.accel_bases * accel_b
                 + weights.accel_tracks * accel_t + weights.radius_reg * radius)
        return Terms(total, track, rigid, accel_b, accel_t, radius)


def _level_weight(weights_per_level, level: int) -> float:
    if level - 1 < len(weights_per_level):
        return float(weights_per_level[level - 1])
    return float(weights_per_level[-1]) if len(weights_per_level) else 0.0


def predict_trajectories(tree: MotionTree, points, K: int = 4) -> np.ndarray:
    """Skinned trajectories [P, T, 3] of canonical ``points`` under ``tree``."""
    eng = Engine(tree, np.asarray(points, dtype=float).reshape(-1, 3), K=K, rigidity_knn=0)
    with torch.no_grad():
        return eng.point_positions(range(tree.frame_count)).numpy().copy()
