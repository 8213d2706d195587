"""SE(3) poses, rotations, rigid alignment, and pose interpolation.

Rotations are stored as 3x3 matrices; quaternions (w, x, y, z) appear only at
the serialization boundary and inside slerp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, DegenerateMatrix


def _vec3(v) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(3)


def _mat3(m) -> np.ndarray:
    return np.asarray(m, dtype=float).reshape(3, 3)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 for a rotation matrix."""
    r = _mat3(r)
    t = np.trace(r)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def matrix_from_quat(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float).reshape(4) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def slerp(qa: np.ndarray, qb: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dot = float(qa @ qb)
    if dot < 0.0:  # hemisphere fix: avoid the long way around
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = qa + t * (qb - qa)
        return q / np.linalg.norm(q)
    theta = math.acos(min(dot, 1.0))
    s = math.sin(theta)
    q = (math.sin((1.0 - t) * theta) * qa + math.sin(t * theta) * qb) / s
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class Pose:
    """World-frame position plus a 3x3 rotation matrix."""

    position: np.ndarray
    rotation: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))

    @staticmethod
    def from_parts(position, rotation=None) -> "Pose":
        rot = np.eye(3) if rotation is None else _mat3(rotation)
        return Pose(_vec3(position), rot)

    @staticmethod
    def from_quat(position, quat) -> "Pose":
        return Pose(_vec3(position), matrix_from_quat(quat))

    def quat(self) -> np.ndarray:
        return quat_from_matrix(self.rotation)

    def to_json(self) -> dict:
        return {"p": [float(v) for v in self.position], "q": [float(v) for v in self.quat()]}

    @staticmethod
    def from_json(obj: dict) -> "Pose":
        return Pose.from_quat(obj["p"], obj["q"])


def compose(a: Pose, b: Pose) -> Pose:
    """Pose of frame b expressed through a: (Ra Rb, Ra pb + pa)."""
    return Pose(a.rotation @ b.position + a.position, a.rotation @ b.rotation)


def inverse(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(-(rt @ p.position), rt)


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Nearest rotation to m in Frobenius norm (polar factor, det +1).

    The sign correction negates the singular direction of the smallest
    singular value, so the result is a proper rotation even when det(m) < 0.
    """
    m = _mat3(m)
    if not np.all(np.isfinite(m)):
        raise DegenerateMatrix("matrix has non-finite entries")
    u, s, vt = np.linalg.svd(m)
    if s[1] < 1e-12:
        raise DegenerateMatrix(f"two smallest singular values below 1e-12: {s}")
    d = np.sign(np.linalg.det(u @ vt))
    if d < 0.0:
        u = u.copy()
        u[:, 2] = -u[:, 2]
    return u @ vt


def interpolate_poses(a: Pose, b: Pose, n_steps: int) -> list[Pose]:
    """n_steps poses from a (exclusive) to b (inclusive, returned bitwise).

    Positions are linear, rotations follow the shortest geodesic.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    qa, qb = a.quat(), b.quat()
    out = []
    for k in range(1, n_steps + 1):
        if k == n_steps:
            out.append(Pose(b.position, b.rotation))
            continue
        t = k / n_steps
        pos = a.position + t * (b.position - a.position)
        out.append(Pose(pos, matrix_from_quat(slerp(qa, qb, t))))
    return out


def kabsch_fit(src: np.ndarray, tgt: np.ndarray) -> Pose:
    """Least-squares rigid transform mapping src onto tgt.

    Minimizes sum ||R src_i + t - tgt_i||^2 with R found by SVD of the
    cross-covariance (determinant-corrected) and t from the centroids.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    tgt = np.asarray(tgt, dtype=float).reshape(-1, 3)
    if src.shape != tgt.shape:
        raise DegenerateInput(f"point sets differ in shape: {src.shape} vs {tgt.shape}")
    if len(src) < 3:
        raise DegenerateInput("need at least 3 points for a rigid fit")
    cs = src.mean(axis=0)
    ct = tgt.mean(axis=0)
    a = src - cs
    b = tgt - ct
    for pts, name in ((a, "src"), (b, "tgt")):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[1] <= 1e-9:
            raise DegenerateInput(f"{name} points are collinear within 1e-9")
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.diag([1.0, 1.0, d])
    rot = vt.T @ corr @ u.T
    return Pose(ct - rot @ cs, rot)


def transform_points(p: Pose, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return pts @ p.rotation.T + p.position


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    c = (np.trace(_mat3(r)) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))
