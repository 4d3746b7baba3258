"""
Synthetic articulated scenes with exact trajectories.

A scene is a kinematic tree of rigid links. Each link sits at ``origin`` in
its parent's frame, optionally slides along a keyed translation profile and
rotates about ``axis`` by a keyed (PCHIP-interpolated) or sinusoidal angle
profile given in degrees. Points are sampled uniformly on a box attached to
each link. Besides the full trajectories the generator reports the coarse
component, i.e. the trajectories obtained with every non-root joint held at
zero.

Example spec::

    {"frames": 30,
     "links": [{"name": "body", "axis": [0, 0, 1],
                "angle": {"keys": [[0, 0], [29, 90]]},
                "translation": {"keys": [[0, [0, 0, 0]], [29, [1, 0, 0]]]},
                "box": {"center": [0, 0, 0], "size": [1, 1, 1]},
                "points": 200}]}
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import SpecError
from .se3 import qfrom_axis_angle, qmul, qrotate
from .tracks import TrackSet


@dataclass
class GroundTruth:
    labels: np.ndarray          # [N] link index per point
    link_names: list[str]
    coarse: np.ndarray          # [N, T, 3] trajectories with non-root joints zeroed
    fine: np.ndarray            # [N, T, 3] full minus coarse displacement
    local_points: np.ndarray    # [N, 3] point coordinates in their link frame


def _profile(spec, T: int, dim: int, name: str) -> np.ndarray:
    """Evaluate a keyed or sinusoidal profile at frames 0..T-1 -> [T, dim]."""
    frames = np.arange(T, dtype=float)
    if spec is None:
        return np.zeros((T, dim))
    if not isinstance(spec, dict):
        raise SpecError(f"{name} must be an object")
    if "keys" in spec:
        keys = spec["keys"]
        if not isinstance(keys, list) or not keys:
            raise SpecError(f"{name}.keys must be a non-empty list")
        try:
            ts = np.array([float(k[0]) for k in keys])
            vs = np.array([np.atleast_1d(np.asarray(k[1], float)) for k in keys]).reshape(len(keys), -1)
        except (TypeError, ValueError, IndexError) as exc:
            raise SpecError(f"malformed {name}.keys: {exc}") from None
        if vs.shape[1] != dim:
            raise SpecError(f"{name} values must have {dim} components")
        if np.any(np.diff(ts) <= 0):
            raise SpecError(f"{name} key times must be strictly increasing")
        if len(ts) == 1:
            return np.repeat(vs, T, axis=0)
        out = PchipInterpolator(ts, vs, axis=0, extrapolate=False)(np.clip(frames, ts[0], ts[-1]))
        return np.asarray(out).reshape(T, dim)
    if "sine" in spec:
        s = spec["sine"]
        try:
            amp = np.atleast_1d(np.asarray(s["amplitude"], float))
            period = float(s["period"])
            phase = float(s.get("phase", 0.0))
            offset = np.atleast_1d(np.asarray(s.get("offset", 0.0), float))
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"malformed {name}.sine: {exc}") from None
        if period <= 0:
            raise SpecError(f"{name}.sine.period must be positive")
        wave = np.sin(2 * np.pi * frames / period + phase)[:, None]
        return np.broadcast_to(offset + amp * wave, (T, dim)).copy()
    raise SpecError(f"{name} needs 'keys' or 'sine'")


def _sample_box(rng, center, size, n) -> np.ndarray:
    size = np.asarray(size, float)
    center = np.asarray(center, float)
    # face areas for the +-x, +-y, +-z faces
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]]).repeat(2)
    total = areas.sum()
    probs = areas / total if total > 0 else np.full(6, 1 / 6)
    faces = rng.choice(6, size=n, p=probs)
    u = rng.uniform(-0.5, 0.5, size=(n, 3))
    axis = faces // 2
    side = np.where(faces % 2 == 0, -0.5, 0.5)
    u[np.arange(n), axis] = side
    return center + u * size


def gen_synthetic(spec: dict, seed: int = 0) -> tuple[TrackSet, GroundTruth]:
    if not isinstance(spec, dict):
        raise SpecError("scene spec must be an object")
    try:
        T = int(spec["frames"])
        links = list(spec["links"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"scene spec needs 'frames' and 'links': {exc}") from None
    if T < 1 or not links:
        raise SpecError("scene needs at least one frame and one link")
    names = []
    for i, link in enumerate(links):
        if not isinstance(link, dict):
            raise SpecError(f"link {i} must be an object")
        names.append(str(link.get("name", f"link{i}")))
    if len(set(names)) != len(names):
        raise SpecError("link names must be unique")
    parent = []
    for i, link in enumerate(links):
        p = link.get("parent")
        if p is None:
            parent.append(-1)
        elif p in names:
            parent.append(names.index(p))
        else:
            raise SpecError(f"link {names[i]} has unknown parent {p!r}")
    if parent.count(-1) != 1:
        raise SpecError("scene needs exactly one root link")
    order, placed = [], set()
    while len(order) < len(links):
        progress = False
        for i in range(len(links)):
            if i not in placed and (parent[i] == -1 or parent[i] in placed):
                order.append(i)
                placed.add(i)
                progress = True
        if not progress:
            raise SpecError("link parents form a cycle")

    rng = np.random.default_rng(seed)
    angle, trans, axis, origin = [], [], [], []
    for i, link in enumerate(links):
        a = np.asarray(link.get("axis", [0.0, 0.0, 1.0]), float)
        if a.shape != (3,) or np.linalg.norm(a) == 0:
            raise SpecError(f"link {names[i]} has an invalid axis")
        axis.append(a / np.linalg.norm(a))
        o = np.asarray(link.get("origin", [0.0, 0.0, 0.0]), float)
        if o.shape != (3,):
            raise SpecError(f"link {names[i]} has an invalid origin")
        origin.append(o)
        angle.append(np.deg2rad(_profile(link.get("angle"), T, 1, f"{names[i]}.angle")[:, 0]))
        trans.append(_profile(link.get("translation"), T, 3, f"{names[i]}.translation"))

    local, labels = [], []
    for i in range(len(links)):
        link = links[i]
        n = int(link.get("points", 0))
        if n < 0:
            raise SpecError(f"link {names[i]} has a negative point count")
        box = link.get("box", {"center": [0, 0, 0], "size": [1, 1, 1]})
        try:
            pts = _sample_box(rng, box["center"], box["size"], n)
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"link {names[i]} has a malformed box: {exc}") from None
        local.append(pts)
        labels.append(np.full(n, i))
    local_pts = np.concatenate(local)
    labels = np.concatenate(labels)
    if len(local_pts) == 0:
        raise SpecError("scene has no points")

    def world_poses(zero_children: bool):
        q = np.zeros((len(links), T, 4))
        t = np.zeros((len(links), T, 3))
        for i in order:
            root = parent[i] == -1
            ang = angle[i] if (root or not zero_children) else np.zeros(T)
            tr = trans[i] if (root or not zero_children) else np.zeros((T, 3))
            lq = np.stack([qfrom_axis_angle(axis[i], a) for a in ang])
            lt = origin[i] + tr
            if root:
                q[i], t[i] = lq, lt
            else:
                pq, pt = q[parent[i]], t[parent[i]]
                q[i] = qmul(pq, lq)
                t[i] = qrotate(pq, lt) + pt
        return q, t

    def trajectories(zero_children: bool):
        q, t = world_poses(zero_children)
        return qrotate(q[labels][:, :, :], local_pts[:, None, :]) + t[labels]

    full = trajectories(False)
    coarse = trajectories(True)
    vis = np.ones(full.shape[:2], dtype=bool)
    dropout = float(spec.get("dropout", 0.0))
    if dropout > 0:
        vis = rng.random(vis.shape) >= dropout
        vis[np.arange(len(vis)), rng.integers(T, size=len(vis))] = True
    return TrackSet(full, vis), GroundTruth(labels, names, coarse, full - coarse, local_pts)


# ---------------------------------------------------------------------------
# preset scenes
# ---------------------------------------------------------------------------

def rigid_body_scene(frames: int = 30, points: int = 200) -> dict:
    """One rigid box turning 90 degrees about z while translating."""
    return {
        "frames": frames,
        "links": [{
            "name": "body", "axis": [0, 0, 1],
            "angle": {"keys": [[0, 0.0], [frames - 1, 90.0]]},
            "translation": {"keys": [[0, [0.0, 0.0, 0.0]], [frames - 1, [1.0, 0.5, 0.0]]]},
            "box": {"center": [0.0, 0.0, 0.0], "size": [1.0, 0.6, 0.4]},
            "points": points,
        }],
    }


def two_link_scene(frames: int = 20, points: tuple = (120, 120)) -> dict:
    """A base link that sweeps and turns, carrying an arm that swings about its joint."""
    return {
        "frames": frames,
        "links": [
            {"name": "base", "axis": [0, 0, 1],
             "angle": {"keys": [[0, 0.0], [frames // 2, 20.0], [frames - 1, 35.0]]},
             "translation": {"keys": [[0, [0.0, 0.0, 0.0]], [frames - 1, [0.6, 0.3, 0.0]]]},
             "box": {"center": [0.5, 0.0, 0.0], "size": [1.0, 0.3, 0.3]},
             "points": points[0]},
            {"name": "arm", "parent": "base", "origin": [1.0, 0.0, 0.0], "axis": [0, 1, 0],
             "angle": {"sine": {"amplitude": 50.0, "period": frames * 0.8}},
             "box": {"center": [0.5, 0.0, 0.0], "size": [1.0, 0.25, 0.25]},
             "points": points[1]},
        ],
    }


def pendulum_cart_scene(frames: int = 30, points: tuple = (200, 100), link_length: float = 1.0) -> dict:
    """A cart translating along x with a pendulum swinging below it, starting at rest angle."""
    return {
        "frames": frames,
        "links": [
            {"name": "cart", "axis": [0, 0, 1],
             "translation": {"keys": [[0, [0.0, 0.0, 0.0]], [frames - 1, [2.0, 0.0, 0.0]]]},
             "box": {"center": [0.0, 0.0, 0.0], "size": [1.0, 0.5, 0.3]},
             "points": points[0]},
            {"name": "pendulum", "parent": "cart", "origin": [0.0, 0.0, -0.15], "axis": [0, 1, 0],
             "angle": {"sine": {"amplitude": 35.0, "period": frames / 1.5}},
             "box": {"center": [0.0, 0.0, -link_length / 2], "size": [0.12, 0.12, link_length]},
             "points": points[1]},
        ],
    }


PRESETS = {
    "rigid_body": rigid_body_scene,
    "two_link": two_link_scene,
    "pendulum_cart": pendulum_cart_scene,
}
