"""
File formats.

Tracks, models, configs, point sets and embeddings are single JSON documents
carrying ``format_version``; floats are written with ``repr`` so a load after
a save is bit-exact. Trajectory exports and fit histories are CSV. Large
track sets may also use a compact binary layout::

    b"HIMORTRK" | u32 N | u32 T | f32[N*T*3] positions | u8[N*T] visibility

all little-endian.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import FitConfig
from .errors import ParseError, VersionError
from .se3 import SE3
from .tracks import TrackSet
from .tree import BasisSet, MotionBasis, MotionNode, MotionTree, OrientedPoint

FORMAT_VERSION = 1
BINARY_MAGIC = b"HIMORTRK"


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n"


def _loads(text: str, path="<string>") -> dict:
    if not text.strip():
        raise ParseError(f"{path}: empty document", 1, 0)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top-level value must be an object")
    return doc


def _check_version(doc: dict, path) -> None:
    if "format_version" not in doc:
        raise ParseError(f"{path}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionError(f"{path}: format_version {doc['format_version']!r}, expected {FORMAT_VERSION}")


def _read(path) -> str:
    return Path(path).read_text()


def _write(path, text: str) -> None:
    Path(path).write_text(text)


def _floats(x) -> list:
    return np.asarray(x, dtype=float).tolist()


# ---------------------------------------------------------------------------
# tracks
# ---------------------------------------------------------------------------

def tracks_to_dict(tracks: TrackSet) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "num_tracks": tracks.num_tracks,
        "num_frames": tracks.frame_count,
        "positions": _floats(tracks.positions),
        "visibility": tracks.visibility.astype(bool).tolist(),
    }


def tracks_from_dict(doc: dict, path="<tracks>") -> TrackSet:
    _check_version(doc, path)
    try:
        n, t = int(doc["num_tracks"]), int(doc["num_frames"])
        pos = np.array(doc["positions"], dtype=float)
        vis = np.array(doc["visibility"], dtype=bool)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed track document: {exc}") from None
    if n == 0:
        raise ParseError(f"{path}: track document holds no tracks")
    if pos.shape != (n, t, 3) or vis.shape != (n, t):
        raise ParseError(f"{path}: positions/visibility do not match num_tracks={n}, num_frames={t}")
    try:
        return TrackSet(pos, vis)
    except Exception as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_tracks(tracks: TrackSet, path) -> None:
    if str(path).endswith(".bin"):
        save_tracks_binary(tracks, path)
    else:
        _write(path, _dumps(tracks_to_dict(tracks)))


def load_tracks(path) -> TrackSet:
    if str(path).endswith(".bin"):
        return load_tracks_binary(path)
    return tracks_from_dict(_loads(_read(path), path), path)


def save_tracks_binary(tracks: TrackSet, path) -> None:
    n, t = tracks.num_tracks, tracks.frame_count
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC + struct.pack("<II", n, t))
        fh.write(tracks.positions.astype("<f4").tobytes())
        fh.write(tracks.visibility.astype(np.uint8).tobytes())


def load_tracks_binary(path) -> TrackSet:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != BINARY_MAGIC:
        raise ParseError(f"{path}: not a binary track file", None, 0)
    n, t = struct.unpack("<II", data[8:16])
    npos = n * t * 3 * 4
    if len(data) != 16 + npos + n * t:
        raise ParseError(f"{path}: truncated or oversized payload", None, len(data))
    pos = np.frombuffer(data, dtype="<f4", count=n * t * 3, offset=16).astype(float).reshape(n, t, 3)
    vis = np.frombuffer(data, dtype=np.uint8, count=n * t, offset=16 + npos).astype(bool).reshape(n, t)
    return TrackSet(pos, vis)


# ---------------------------------------------------------------------------
# motion trees
# ---------------------------------------------------------------------------

def tree_to_dict(tree: MotionTree) -> dict:
    nodes = []
    for nid in sorted(tree.nodes):
        n = tree.nodes[nid]
        nodes.append({
            "id": n.id,
            "parent": n.parent_id,
            "level": n.level,
            "position": _floats(n.position),
            "radius": float(n.radius),
            "coefficients": _floats(n.coefficients),
        })
    basis_sets = []
    for owner in sorted(tree.basis_sets):
        bs = tree.basis_sets[owner]
        basis_sets.append({
            "owner": owner,
            "bases": [[{"q": _floats(T.q), "t": _floats(T.translation)} for T in b.transforms]
                      for b in bs.bases],
        })
    return {
        "format_version": FORMAT_VERSION,
        "frame_count": tree.frame_count,
        "canonical_frame": tree.canonical_frame,
        "nodes": nodes,
        "basis_sets": basis_sets,
    }


def tree_from_dict(doc: dict, path="<model>") -> MotionTree:
    _check_version(doc, path)
    try:
        tree = MotionTree(int(doc["frame_count"]), int(doc["canonical_frame"]))
        for n in doc["nodes"]:
            parent = n["parent"]
            tree.nodes[int(n["id"])] = MotionNode(
                int(n["id"]), None if parent is None else int(parent), int(n["level"]),
                np.array(n["position"], float), float(n["radius"]),
                np.array(n["coefficients"], float))
        for bs in doc["basis_sets"]:
            owner = int(bs["owner"])
            bases = [MotionBasis([_se3_exact(f["q"], f["t"]) for f in b]) for b in bs["bases"]]
            tree.basis_sets[owner] = BasisSet(owner, bases)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed model document: {exc!r}") from None
    try:
        tree.validate()
    except Exception as exc:
        raise ParseError(f"{path}: invalid tree: {exc}") from None
    return tree


def _se3_exact(q, t) -> SE3:
    """Rebuild an SE3 keeping the stored quaternion bits (already unit)."""
    T = SE3.from_qt(q, t)
    q = np.asarray(q, float)
    if np.linalg.norm(q) > 0 and abs(np.linalg.norm(q) - 1.0) < 1e-12:
        rot = T.rotation
        for name, val in zip("wxyz", q):
            object.__setattr__(rot, name, float(val))
    return T


def save_tree(tree: MotionTree, path) -> None:
    _write(path, _dumps(tree_to_dict(tree)))


def load_tree(path) -> MotionTree:
    return tree_from_dict(_loads(_read(path), path), path)


def dumps_tree(tree: MotionTree) -> str:
    return _dumps(tree_to_dict(tree))


# ---------------------------------------------------------------------------
# configs, points, embeddings
# ---------------------------------------------------------------------------

def save_config(config: FitConfig, path) -> None:
    _write(path, _dumps({"format_version": FORMAT_VERSION, **config.to_dict()}))


def load_config(path) -> FitConfig:
    doc = _loads(_read(path), path)
    if "format_version" in doc:
        _check_version(doc, path)
    try:
        return FitConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_points(points: Iterable[OrientedPoint], path) -> None:
    points = list(points)
    _write(path, _dumps({
        "format_version": FORMAT_VERSION,
        "positions": [_floats(p.position) for p in points],
        "orientations": [_floats(p.orientation.as_array()) for p in points],
    }))


def load_points(path, canonical_frame: int = None) -> list[OrientedPoint]:
    """
    Read a point file, or take the canonical-frame positions of a track file
    (``canonical_frame`` must then be given).
    """
    if str(path).endswith(".bin"):
        tracks = load_tracks_binary(path)
        return [OrientedPoint(p) for p in tracks.positions[:, canonical_frame or 0]]
    doc = _loads(_read(path), path)
    _check_version(doc, path)
    if "num_tracks" in doc:
        tracks = tracks_from_dict(doc, path)
        frame = 0 if canonical_frame is None else canonical_frame
        return [OrientedPoint(p) for p in tracks.positions[:, frame]]
    try:
        pos = np.array(doc["positions"], float).reshape(-1, 3)
        ori = doc.get("orientations")
        ori = np.array(ori, float).reshape(-1, 4) if ori is not None else np.tile([1.0, 0, 0, 0], (len(pos), 1))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed point document: {exc}") from None
    if len(ori) != len(pos):
        raise ParseError(f"{path}: orientations and positions differ in length")
    return [OrientedPoint(p, o) for p, o in zip(pos, ori)]


def load_embeddings(path) -> np.ndarray:
    doc = _loads(_read(path), path)
    try:
        dim = int(doc["dim"])
        frames = np.array(doc["frames"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed embedding document: {exc}") from None
    if frames.ndim != 2 or frames.shape[1] != dim:
        raise ParseError(f"{path}: frames must be a list of {dim}-vectors")
    return frames


def save_embeddings(frames, path) -> None:
    frames = np.asarray(frames, float)
    _write(path, _dumps({"dim": int(frames.shape[1]), "frames": _floats(frames)}))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_trajectories_csv(trajectories: np.ndarray, path) -> None:
    """One row per (point, frame): point_id, frame, x, y, z."""
    traj = np.asarray(trajectories, float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_id", "frame", "x", "y", "z"])
        for i in range(traj.shape[0]):
            for t in range(traj.shape[1]):
                x, y, z = traj[i, t]
                w.writerow([i, t, repr(float(x)), repr(float(y)), repr(float(z))])


def read_trajectories_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ParseError(f"{path}: no trajectory rows", 1, 0)
    n = max(int(r["point_id"]) for r in rows) + 1
    t = max(int(r["frame"]) for r in rows) + 1
    out = np.full((n, t, 3), np.nan)
    for r in rows:
        out[int(r["point_id"]), int(r["frame"])] = [float(r["x"]), float(r["y"]), float(r["z"])]
    return out


def write_history_csv(history: list[dict], path, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in history:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
