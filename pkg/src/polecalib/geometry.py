"""Rotation and rigid-transform algebra, lines and point clouds.

Conventions:
    - Rotations are 3x3 numpy arrays; quaternions are ``[w, x, y, z]``.
    - ``RigidTransform(R, t)`` maps ``p -> R @ p + t``.
    - A ``Line3`` is ``anchor + lambda * direction`` with a unit direction whose
      sign is canonical (z >= 0, then y >= 0, then x >= 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GeometryError

_SMALL_ANGLE = 1e-8
_NEAR_PI = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]], dtype=float
    )


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]], dtype=float)


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a quaternion ``[w, x, y, z]`` (normalized first)."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise GeometryError("quaternion has zero or non-finite norm", hint="pass [w, x, y, z] with non-zero norm")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion ``[w, x, y, z]`` with ``w >= 0`` (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif k == 1:
        s = 2.0 * math.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif k == 2:
        s = 2.0 * math.sqrt(max(1.0 - R[0, 0] + R[1, 1] - R[2, 2], 0.0))
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(max(1.0 - R[0, 0] - R[1, 1] + R[2, 2], 0.0))
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def project_to_rotation(M: np.ndarray) -> np.ndarray:
    """Nearest proper rotation to ``M`` in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def so3_exp(omega) -> np.ndarray:
    """Rodrigues' formula; series expansion below ``1e-8`` rad."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * K @ K


def so3_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation, with norm in ``[0, pi]``.

    Uses the first-order series near the identity and extracts the axis from
    the largest diagonal entry of the outer product ``aa^T`` near a half turn.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    w = 0.5 * vee(R - R.T)
    sin_theta = float(np.linalg.norm(w))
    theta = math.atan2(sin_theta, cos_theta)
    if theta < _SMALL_ANGLE:
        return w
    if math.pi - theta > _NEAR_PI:
        return w * (theta / sin_theta)
    # near pi: sym(R) = cos I + (1 - cos) aa^T exactly, so read aa^T off it
    S = (0.5 * (R + R.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / math.sqrt(max(S[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    # keep the sign consistent with the (tiny) antisymmetric part
    if np.dot(axis, w) < 0:
        axis = -axis
    return axis * theta


def rotation_error(R: np.ndarray) -> float:
    """Angle of ``R`` in radians, in ``[0, pi]``."""
    return float(np.linalg.norm(so3_log(R)))


def translation_error(t) -> float:
    return float(np.linalg.norm(np.asarray(t, dtype=float)))


def angle_axis(angle: float, axis) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return so3_exp(angle * axis / np.linalg.norm(axis))


def rotation_pi_about(a) -> np.ndarray:
    """Half-turn ``2 a a^T - I`` about the unit vector ``a``."""
    a = np.asarray(a, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-9:
        raise GeometryError(
            f"half-turn axis must be a unit vector, got norm {np.linalg.norm(a):.3g}",
            hint="normalize the axis before calling rotation_pi_about",
        )
    return 2.0 * np.outer(a, a) - np.eye(3)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0 or not np.isfinite(n):
        raise GeometryError("cannot normalize a zero or non-finite vector")
    return v / n


@dataclass(frozen=True)
class RigidTransform:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_quat(cls, q, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(quat_to_matrix(q), t)

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @property
    def quat(self) -> np.ndarray:
        return matrix_to_quat(self.R)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def apply(self, p) -> np.ndarray:
        """Transform one point ``(3,)`` or many ``(N, 3)``."""
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.t

    def rotate(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.R.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self * other``: apply ``other`` first."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def apply_line(self, line: "Line3") -> "Line3":
        return Line3(self.apply(line.anchor), self.rotate(line.direction))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(T: RigidTransform) -> RigidTransform:
    return T.inverse()


def apply(T: RigidTransform, p) -> np.ndarray:
    return T.apply(p)


def relative_errors(result: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """Rotation angle and translation distance between two transforms."""
    return (
        rotation_error(truth.R.T @ result.R),
        translation_error(result.t - truth.t),
    )


def canonical_direction(d) -> np.ndarray:
    d = normalize(d)
    for k in (2, 1, 0):
        if d[k] > 0:
            return d
        if d[k] < 0:
            return -d
    return d


@dataclass(frozen=True)
class Line3:
    anchor: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        a = np.array(self.anchor, dtype=float).reshape(3)
        d = canonical_direction(np.array(self.direction, dtype=float).reshape(3))
        if not np.all(np.isfinite(a)):
            raise GeometryError("line anchor must be finite")
        a.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "direction", d)

    def point_at(self, lam) -> np.ndarray:
        return self.anchor + np.multiply.outer(lam, self.direction)

    def distance(self, p) -> np.ndarray:
        return point_to_line_distance(p, self)


def point_to_line_distance(p, line: Line3):
    """Orthogonal distance of one point or an ``(N, 3)`` array to a line."""
    diff = np.asarray(p, dtype=float) - line.anchor
    perp = diff - np.multiply.outer(diff @ line.direction, line.direction)
    return np.linalg.norm(perp, axis=-1)


def line_angle(a: Line3, b: Line3) -> float:
    """Angle between two line directions, ignoring sign, in ``[0, pi/2]``."""
    c = abs(float(np.dot(a.direction, b.direction)))
    return math.acos(min(1.0, c))


def common_perpendicular_midpoint(l1: Line3, l2: Line3) -> np.ndarray:
    """Midpoint of the shortest segment joining two non-parallel lines."""
    d1, d2 = l1.direction, l2.direction
    w0 = l1.anchor - l2.anchor
    b = float(d1 @ d2)
    denom = 1.0 - b * b
    if denom < 1e-12:
        raise GeometryError("lines are parallel; common perpendicular undefined")
    d, e = float(d1 @ w0), float(d2 @ w0)
    s = (b * e - d) / denom
    u = (e - b * d) / denom
    return 0.5 * ((l1.anchor + s * d1) + (l2.anchor + u * d2))


@dataclass
class PointCloud:
    """Points with intensities; ``ring`` and ``label`` are optional per-point ints.

    ``label`` is simulator ground truth (pole index, or -1 for background).
    """

    points: np.ndarray
    intensities: np.ndarray
    ring: Optional[np.ndarray] = None
    label: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.intensities = np.asarray(self.intensities, dtype=float).reshape(-1)
        n = len(self.points)
        if len(self.intensities) != n:
            raise GeometryError(
                f"{n} points but {len(self.intensities)} intensities",
                hint="points and intensities must be parallel arrays",
            )
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("point cloud contains NaN or Inf coordinates")
        for name in ("ring", "label"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=int).reshape(-1)
                if len(arr) != n:
                    raise GeometryError(f"{name} has {len(arr)} entries for {n} points")
                setattr(self, name, arr)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        return PointCloud(
            self.points[idx],
            self.intensities[idx],
            None if self.ring is None else self.ring[idx],
            None if self.label is None else self.label[idx],
        )

    def transformed(self, T: RigidTransform) -> "PointCloud":
        return PointCloud(T.apply(self.points), self.intensities.copy(), self.ring, self.label)

    @staticmethod
    def concat(clouds) -> "PointCloud":
        clouds = list(clouds)
        rings = [c.ring for c in clouds]
        labels = [c.label for c in clouds]
        return PointCloud(
            np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3)),
            np.concatenate([c.intensities for c in clouds]) if clouds else np.zeros(0),
            None if any(r is None for r in rings) else np.concatenate(rings),
            None if any(lb is None for lb in labels) else np.concatenate(labels),
        )
