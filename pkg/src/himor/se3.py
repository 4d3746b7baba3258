"""
Rigid-transform algebra on unit quaternions and dual quaternions.

Quaternions are stored scalar-first, ``(w, x, y, z)``. Every helper prefixed
with ``q`` works on plain numpy arrays with a trailing axis of length 4 and
broadcasts over leading axes; the dataclasses wrap single values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateBlend, DegenerateGeometry

_BLEND_EPS = 1e-12


# ---------------------------------------------------------------------------
# array-level quaternion helpers
# ---------------------------------------------------------------------------

def qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b``."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, float), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def qconj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qnormalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < _BLEND_EPS):
        raise DegenerateBlend("quaternion norm too small to normalize")
    return q / n


def qrotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors ``v`` by unit quaternions ``q``."""
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def qto_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(np.asarray(q, float), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def qfrom_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) of a single 3x3 rotation matrix."""
    R = np.asarray(R, float)
    tr = np.trace(R)
    # Shepperd's method: branch on the largest diagonal term for stability
    if tr > 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def qfrom_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])


def quat_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Distance between rotations, insensitive to the double cover."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quat:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        q = qnormalize(np.array([self.w, self.x, self.y, self.z], float))
        for name, val in zip("wxyz", q):
            object.__setattr__(self, name, float(val))

    @classmethod
    def from_array(cls, q) -> "Quat":
        return cls(*np.asarray(q, float).tolist())

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def __neg__(self) -> "Quat":
        return Quat(-self.w, -self.x, -self.y, -self.z)


@dataclass(frozen=True)
class SE3:
    """Rigid transform ``p -> R p + t`` with ``R`` stored as a unit quaternion."""

    rotation: Quat = field(default_factory=Quat)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)
        if not isinstance(self.rotation, Quat):
            object.__setattr__(self, "rotation", Quat.from_array(self.rotation))

    @classmethod
    def identity(cls) -> "SE3":
        return cls()

    @classmethod
    def from_qt(cls, q, t) -> "SE3":
        return cls(Quat.from_array(q), np.asarray(t, float))

    @classmethod
    def from_translation(cls, x, y=None, z=None) -> "SE3":
        t = np.asarray(x, float) if y is None else np.array([x, y, z], float)
        return cls(Quat(), t)

    @classmethod
    def from_axis_angle(cls, axis, angle, translation=(0.0, 0.0, 0.0)) -> "SE3":
        return cls(Quat.from_array(qfrom_axis_angle(axis, angle)), np.asarray(translation, float))

    @classmethod
    def from_matrix(cls, R, t) -> "SE3":
        return cls(Quat.from_array(qfrom_matrix(R)), np.asarray(t, float))

    @property
    def q(self) -> np.ndarray:
        return self.rotation.as_array()

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = qto_matrix(self.q)
        m[:3, 3] = self.translation
        return m

    def allclose(self, other: "SE3", atol: float = 1e-9) -> bool:
        return (quat_distance(self.q, other.q) <= atol
                and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol))

    def __matmul__(self, other):
        if isinstance(other, SE3):
            return se3_compose(self, other)
        return se3_apply(self, other)


def se3_compose(a: SE3, b: SE3) -> SE3:
    """Transform that applies ``b`` first, then ``a``."""
    q = qmul(a.q, b.q)
    t = qrotate(a.q, b.translation) + a.translation
    return SE3.from_qt(q, t)


def se3_apply(T: SE3, p) -> np.ndarray:
    p = np.asarray(p, float)
    return qrotate(T.q, p) + T.translation


def se3_inverse(T: SE3) -> SE3:
    qi = qconj(T.q)
    return SE3.from_qt(qi, -qrotate(qi, T.translation))


# ---------------------------------------------------------------------------
# dual quaternions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualQuat:
    real: np.ndarray
    dual: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "real", np.array(self.real, float).reshape(4))
        object.__setattr__(self, "dual", np.array(self.dual, float).reshape(4))

    def normalized(self) -> "DualQuat":
        n = np.linalg.norm(self.real)
        if n < _BLEND_EPS:
            raise DegenerateBlend(f"dual quaternion real part has norm {n:.3g}")
        r = self.real / n
        d = self.dual / n
        # remove the component that breaks real . dual == 0
        d = d - np.dot(r, d) * r
        return DualQuat(r, d)


def se3_to_dq(T: SE3) -> DualQuat:
    q = T.q
    t = np.concatenate([[0.0], T.translation])
    return DualQuat(q, 0.5 * qmul(t, q))


def dq_to_se3(d: DualQuat) -> SE3:
    d = d.normalized()
    t = 2.0 * qmul(d.dual, qconj(d.real))
    return SE3.from_qt(d.real, t[1:])


def dq_blend(weights: Sequence[float], transforms: Sequence[DualQuat]) -> DualQuat:
    """
    Weighted dual-quaternion blend.

    Each input's real part is flipped onto the hemisphere of the input with
    the largest ``|weight|`` (first one on ties), the weighted sum is taken
    and the result normalized. Negative weights are allowed.
    """
    w = np.asarray(weights, float).reshape(-1)
    if len(w) == 0 or len(w) != len(transforms):
        raise ValueError("weights and transforms must be non-empty and equally long")
    real = np.stack([d.real for d in transforms])
    dual = np.stack([d.dual for d in transforms])
    pivot = int(np.argmax(np.abs(w)))
    sign = np.where(real @ real[pivot] < 0.0, -1.0, 1.0)
    ws = (w * sign)[:, None]
    blended = DualQuat((ws * real).sum(0), (ws * dual).sum(0))
    return blended.normalized()


def blend_se3(weights: Sequence[float], transforms: Sequence[SE3]) -> SE3:
    return dq_to_se3(dq_blend(weights, [se3_to_dq(T) for T in transforms]))


# ---------------------------------------------------------------------------
# Procrustes
# ---------------------------------------------------------------------------

def kabsch_se3(src, dst) -> SE3:
    """Least-squares rigid transform mapping ``src`` onto ``dst``."""
    src = np.asarray(src, float).reshape(-1, 3)
    dst = np.asarray(dst, float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same shape")
    if len(src) < 3:
        raise DegenerateGeometry(f"need at least 3 point pairs, got {len(src)}")
    cs = src.mean(0)
    cd = dst.mean(0)
    H = (src - cs).T @ (dst - cd)
    U, S, Vt = np.linalg.svd(H)
    if S[0] == 0.0 or S[1] < 1e-12 * S[0]:
        raise DegenerateGeometry("cross-covariance is rank deficient")
    d = 1.0 if np.linalg.det(Vt.T @ U.T) >= 0 else -1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = cd - R @ cs
    return SE3.from_matrix(R, t)
