"""Rotations, quaternions and similarity transforms.

Points are plain ``numpy`` arrays: a single point has shape ``(3,)`` and a
point set has shape ``(N, 3)``.  Quaternions are ``(w, x, y, z)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROTATION_TOL = 1e-9


def _frozen(a, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


def is_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues formula for a rotation of ``angle`` radians about ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]],
                  [k[2], 0.0, -k[0]],
                  [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (via a random unit quaternion)."""
    q = rng.normal(size=4)
    return quat_to_rotation(q / np.linalg.norm(q))


# ── Quaternions ─────────────────────────────────────────────────────────

_QUAT_SIGN_TOL = 1e-12


def canonical_quat(q) -> np.ndarray:
    """Pick the sign of ``q`` with w > 0 (tie: first nonzero component > 0).

    Components below 1e-12 in magnitude count as zero, so half-turns whose
    w is a rounding residue resolve by the axis instead.
    """
    q = np.asarray(q, dtype=np.float64)
    for c in q:
        if abs(c) > _QUAT_SIGN_TOL:
            return q if c > 0 else -q
    return q


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Convert a rotation matrix to a canonical unit quaternion (w, x, y, z)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    # Shepperd's method: branch on the largest diagonal term for stability.
    if tr > max(R[0, 0], R[1, 1], R[2, 2]):
        r = np.sqrt(1.0 + tr)
        q = [0.5 * r,
             (R[2, 1] - R[1, 2]) / (2 * r),
             (R[0, 2] - R[2, 0]) / (2 * r),
             (R[1, 0] - R[0, 1]) / (2 * r)]
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        r = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / (2 * r),
             0.5 * r,
             (R[0, 1] + R[1, 0]) / (2 * r),
             (R[0, 2] + R[2, 0]) / (2 * r)]
    elif R[1, 1] >= R[2, 2]:
        r = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / (2 * r),
             (R[0, 1] + R[1, 0]) / (2 * r),
             0.5 * r,
             (R[1, 2] + R[2, 1]) / (2 * r)]
    else:
        r = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / (2 * r),
             (R[0, 2] + R[2, 0]) / (2 * r),
             (R[1, 2] + R[2, 1]) / (2 * r),
             0.5 * r]
    q = np.asarray(q)
    return canonical_quat(q / np.linalg.norm(q))


def quat_to_rotation(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_angle(q1, q2) -> float:
    """Angle in radians between the rotations represented by two quaternions.

    ``2 * arccos(|q1 . q2| / (|q1| |q2|))``; the absolute value makes ``q``
    and ``-q`` equivalent.  The cosine is clamped to 1 before ``arccos``.
    """
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    c = abs(float(q1 @ q2)) / (np.linalg.norm(q1) * np.linalg.norm(q2))
    return float(2.0 * np.arccos(min(c, 1.0)))


def rotation_angle(R1: np.ndarray, R2: np.ndarray) -> float:
    return quat_angle(rotation_to_quat(R1), rotation_to_quat(R2))


# ── Similarity transforms ───────────────────────────────────────────────

@dataclass(frozen=True)
class SimTransform:
    """Similarity transform ``p -> s * (R @ p) + t``."""

    s: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        s = float(self.s)
        if not (np.isfinite(s) and s > 0):
            raise ValueError(f"scale must be positive and finite, got {self.s}")
        R = _frozen(self.R, (3, 3))
        if not is_rotation(R):
            raise ValueError("R is not a proper rotation within tolerance")
        t = _frozen(self.t, (3,))
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> SimTransform:
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, p: np.ndarray) -> np.ndarray:
        return apply_sim3(self, p)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.s * self.R
        M[:3, 3] = self.t
        return M

    def to_dict(self) -> dict:
        return {"s": self.s,
                "R": [float(v) for v in self.R.ravel()],
                "t": [float(v) for v in self.t]}

    @classmethod
    def from_dict(cls, d: dict) -> SimTransform:
        return cls(d["s"], np.reshape(d["R"], (3, 3)), d["t"])


def apply_sim3(T: SimTransform, p) -> np.ndarray:
    """Apply ``T`` to a point ``(3,)`` or point set ``(N, 3)``."""
    p = np.asarray(p, dtype=np.float64)
    return T.s * (p @ T.R.T) + T.t


def compose_sim3(A: SimTransform, B: SimTransform) -> SimTransform:
    """Transform equivalent to applying ``B`` first, then ``A``."""
    return SimTransform(A.s * B.s, A.R @ B.R, A.s * (A.R @ B.t) + A.t)


def invert_sim3(T: SimTransform) -> SimTransform:
    Rt = T.R.T
    return SimTransform(1.0 / T.s, Rt, -(Rt @ T.t) / T.s)
