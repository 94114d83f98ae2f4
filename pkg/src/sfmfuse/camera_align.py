"""Camera-set alignment and pose error metrics.

Poses here are camera-to-world: ``rotation`` maps camera axes into the
world and ``position`` is the camera center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CountMismatch, DegenerateConfiguration, EmptyInput
from .geometry import (
    SimTransform,
    apply_sim3,
    is_rotation,
    quat_angle,
    rotation_to_quat,
)
from .procrustes import solve_similarity
from .ransac import RansacParams, ransac_fit
from .scene_io import CameraView

SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        if not is_rotation(R):
            raise ValueError("camera rotation is not a proper rotation")
        p = np.array(self.position, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", p)

    @classmethod
    def from_view(cls, cam: CameraView) -> CameraPose:
        """Convert world-to-camera extrinsics to a camera-to-world pose."""
        Rt = cam.world_to_camera.R.T
        return cls(Rt, -(Rt @ cam.world_to_camera.t))


@dataclass
class PoseErrorReport:
    """Absolute errors after alignment and relative pose errors.

    Rotation errors are radians except ``rpe_r``, which is degrees.
    ``rpe_t`` and ``rpe_r`` are RMS over consecutive pose pairs of
    trajectories normalized to zero centroid and unit mean radius.
    """

    e_r: list[float] = field(default_factory=list)
    e_t: list[float] = field(default_factory=list)
    rpe_t: float = 0.0
    rpe_r: float = 0.0

    @property
    def e_r_mean(self) -> float:
        return float(np.mean(self.e_r)) if self.e_r else 0.0

    @property
    def e_t_mean(self) -> float:
        return float(np.mean(self.e_t)) if self.e_t else 0.0

    def to_dict(self) -> dict:
        return {"E_R_mean_rad": self.e_r_mean, "E_T_mean": self.e_t_mean,
                "E_R_rad": list(self.e_r), "E_T": list(self.e_t),
                "RPE_t": self.rpe_t, "RPE_r_deg": self.rpe_r}


def _positions(poses) -> np.ndarray:
    return np.array([p.position for p in poses], dtype=np.float64).reshape(-1, 3)


def camera_cloud_scale(poses: list[CameraPose]) -> float:
    """``sqrt(var_x + var_y + var_z)`` of the camera centers (population std)."""
    if len(poses) == 0:
        raise EmptyInput("no camera poses")
    std = _positions(poses).std(axis=0)
    return max(float(np.sqrt(np.sum(std ** 2))), SCALE_FLOOR)


def rotation_points(pose: CameraPose, s_cloud: float) -> np.ndarray:
    """Three auxiliary points, ``position + s_cloud * R[:, j]`` as rows."""
    return pose.position + s_cloud * pose.rotation.T


def _point_pairs(est, ref, use_rotation_points: bool):
    if not use_rotation_points:
        return _positions(est), _positions(ref), np.arange(len(est))
    s_est, s_ref = camera_cloud_scale(est), camera_cloud_scale(ref)

    def stack(poses, s):
        return np.concatenate(
            [np.vstack([p.position, rotation_points(p, s)]) for p in poses])

    return stack(est, s_est), stack(ref, s_ref), np.repeat(np.arange(len(est)), 4)


def apply_to_pose(T: SimTransform, pose: CameraPose) -> CameraPose:
    return CameraPose(T.R @ pose.rotation, apply_sim3(T, pose.position))


def pose_errors(est: list[CameraPose], ref: list[CameraPose]):
    """Per-camera rotation angle (radians) and center distance."""
    e_r = [quat_angle(rotation_to_quat(a.rotation), rotation_to_quat(b.rotation))
           for a, b in zip(est, ref)]
    e_t = [float(np.linalg.norm(a.position - b.position)) for a, b in zip(est, ref)]
    return e_r, e_t


def align_camera_sets(est: list[CameraPose], ref: list[CameraPose], *,
                      use_rotation_points: bool = False,
                      ransac: RansacParams | None = None,
                      ) -> tuple[SimTransform, PoseErrorReport]:
    """Align ``est`` onto ``ref`` (index-matched) and measure pose errors.

    With ``use_rotation_points`` each camera contributes its center plus
    three rotation points.  With ``ransac`` whole cameras are sampled and a
    camera's residual is the max over its points.
    """
    if len(est) != len(ref):
        raise CountMismatch(f"{len(est)} estimated vs {len(ref)} reference cameras")
    min_cams = 1 if use_rotation_points else 3
    if len(est) < min_cams:
        raise DegenerateConfiguration(f"need at least {min_cams} cameras")
    src, dst, units = _point_pairs(est, ref, use_rotation_points)
    if ransac is None:
        T = solve_similarity(src, dst)
    else:
        T = ransac_fit(src, dst, ransac, units=units)[0]
    aligned = [apply_to_pose(T, p) for p in est]
    e_r, e_t = pose_errors(aligned, ref)
    rpe_t, rpe_r = relative_pose_error(est, ref) if len(est) >= 2 else (0.0, 0.0)
    return T, PoseErrorReport(e_r, e_t, rpe_t, rpe_r)


def normalize_trajectory(poses: list[CameraPose]) -> list[CameraPose]:
    """Center the camera positions and scale to unit mean distance from center."""
    pos = _positions(poses)
    centered = pos - pos.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).mean()
    scale = 1.0 / radius if radius > SCALE_FLOOR else 1.0
    return [CameraPose(p.rotation, c * scale) for p, c in zip(poses, centered)]


def _relative_motions(poses):
    for a, b in zip(poses[:-1], poses[1:]):
        yield a.rotation.T @ b.rotation, a.rotation.T @ (b.position - a.position)


def relative_pose_error(est: list[CameraPose], ref: list[CameraPose]) -> tuple[float, float]:
    """RMS relative translation and rotation (degrees) errors over consecutive pairs."""
    if len(est) != len(ref):
        raise CountMismatch(f"{len(est)} estimated vs {len(ref)} reference poses")
    if len(est) < 2:
        raise CountMismatch("relative pose error needs at least two poses")
    dt, dr = [], []
    for (Re, te), (Rr, tr) in zip(_relative_motions(normalize_trajectory(est)),
                                  _relative_motions(normalize_trajectory(ref))):
        dt.append(np.sum((te - tr) ** 2))
        dr.append(quat_angle(rotation_to_quat(Re), rotation_to_quat(Rr)) ** 2)
    return float(np.sqrt(np.mean(dt))), float(np.degrees(np.sqrt(np.mean(dr))))
