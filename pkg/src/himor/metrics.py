"""Trajectory and embedding metrics."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch, ZeroNorm
from .tracks import TrackSet

DEFAULT_PCK_RATIO = 0.05


def _positions(x) -> np.ndarray:
    return x.positions if isinstance(x, TrackSet) else np.asarray(x, dtype=float)


def _errors(pred, gt: TrackSet) -> np.ndarray:
    """Euclidean errors at the visible (track, frame) entries of ``gt``."""
    p = _positions(pred)
    if p.shape != gt.positions.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} does not match ground truth {gt.positions.shape}")
    err = np.linalg.norm(p - gt.positions, axis=-1)
    return err[gt.visibility]


def epe(pred, gt: TrackSet) -> float:
    """Mean end-point error over visible entries."""
    return float(np.mean(_errors(pred, gt)))


def canonical_bbox_diagonal(gt: TrackSet) -> float:
    from .tracks import select_canonical_frame

    return gt.bbox_diagonal(select_canonical_frame(gt))


def pck_t(pred, gt: TrackSet, ratio: float = DEFAULT_PCK_RATIO) -> float:
    """Fraction of visible entries whose error is within ``ratio`` times the canonical bbox diagonal."""
    if not ratio > 0:
        raise ValueError("ratio must be positive")
    err = _errors(pred, gt)
    return float(np.mean(err <= ratio * canonical_bbox_diagonal(gt)))


def embed_sim(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatch(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroNorm("cannot compare a zero-norm embedding")
    return float(np.dot(a, b) / (na * nb))


def clip_i(rendered, reference) -> float:
    """Mean per-frame similarity between rendered and reference embeddings."""
    rendered = np.asarray(rendered, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if rendered.shape != reference.shape:
        raise ShapeMismatch(f"embedding sequences differ: {rendered.shape} vs {reference.shape}")
    return float(np.mean([embed_sim(r, g) for r, g in zip(rendered, reference)]))


def clip_t(rendered, interval: int) -> float:
    """Mean similarity between frames ``t`` and ``t + interval`` of one embedding sequence."""
    rendered = np.asarray(rendered, dtype=float)
    if interval < 1:
        raise ValueError("interval must be at least 1")
    if interval >= len(rendered):
        raise ShapeMismatch(f"interval {interval} leaves no frame pairs in {len(rendered)} frames")
    return float(np.mean([embed_sim(rendered[t], rendered[t + interval])
                          for t in range(len(rendered) - interval)]))
