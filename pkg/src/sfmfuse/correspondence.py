"""Match SfM points to pointmap points through the reference view."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyScene, ViewMismatch
from .geometry import apply_sim3
from .scene_io import CameraView, DensePointmap, SfMScene


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched (dense, SfM) point pairs in one reference view.

    Row ``i`` of every array describes one correspondence; rows are sorted
    by ascending ``sfm_ids``.  ``pixels`` holds integer ``(u, v)``.
    """

    reference_view: int
    dense: np.ndarray
    sfm: np.ndarray
    pixels: np.ndarray
    sfm_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.sfm_ids)

    def subset(self, index) -> CorrespondenceSet:
        return CorrespondenceSet(self.reference_view, self.dense[index], self.sfm[index],
                                 self.pixels[index], self.sfm_ids[index])


def select_reference_view(scene: SfMScene) -> int:
    """View with the most visible SfM points; ties go to the lowest view id."""
    if not scene.cameras or len(scene) == 0:
        raise EmptyScene("need at least one camera and one point")
    counts = dict.fromkeys(scene.cameras, 0)
    for track in scene.tracks:
        for view in np.unique(track[:, 0].astype(np.int64)):
            if int(view) in counts:
                counts[int(view)] += 1
    return max(sorted(counts), key=lambda v: counts[v])


def project_points(cam: CameraView, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of ``(N, 3)`` world points.

    Returns ``(uv, in_front)``; ``uv`` rows for points with camera-frame
    depth <= 0 are NaN.
    """
    q = apply_sim3(cam.world_to_camera, np.asarray(points, dtype=np.float64).reshape(-1, 3))
    in_front = q[:, 2] > 0
    uv = np.full((len(q), 2), np.nan)
    z = q[in_front, 2]
    uv[in_front, 0] = cam.fx * q[in_front, 0] / z + cam.cx
    uv[in_front, 1] = cam.fy * q[in_front, 1] / z + cam.cy
    return uv, in_front


def project_point(cam: CameraView, p) -> tuple[float, float] | None:
    """Project one point to real-valued pixel coordinates; ``None`` if behind."""
    uv, in_front = project_points(cam, np.asarray(p, dtype=np.float64)[None])
    if not in_front[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def build_correspondences(scene: SfMScene, pointmap: DensePointmap,
                          view: int) -> CorrespondenceSet:
    """Pair each SfM point visible in ``view`` with the pointmap value at its
    projected pixel.

    Points projecting behind the camera or outside the grid are skipped.
    When several points land on the same pixel, the one whose unrounded
    projection is closest to the pixel center wins (then the lower id).
    """
    if pointmap.view_id != view:
        raise ViewMismatch(f"pointmap is view {pointmap.view_id}, expected {view}")
    if view not in scene.cameras:
        raise ViewMismatch(f"scene has no camera for view {view}")
    cam = scene.cameras[view]

    idx = np.flatnonzero(scene.visible_in(view))
    uv, in_front = project_points(cam, scene.xyz[idx])
    idx, uv = idx[in_front], uv[in_front]
    pix = round_half_away(uv)
    inside = ((pix[:, 0] >= 0) & (pix[:, 0] < pointmap.width)
              & (pix[:, 1] >= 0) & (pix[:, 1] < pointmap.height))
    idx, uv, pix = idx[inside], uv[inside], pix[inside].astype(np.int64)

    ids = scene.point_ids[idx]
    dist = np.linalg.norm(uv - pix, axis=1)
    flat = pix[:, 1] * pointmap.width + pix[:, 0]
    order = np.lexsort((ids, dist, flat))
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat[order][1:] != flat[order][:-1]
    keep = order[first]
    keep = keep[np.argsort(ids[keep], kind="stable")]

    pix = pix[keep]
    return CorrespondenceSet(
        reference_view=view,
        dense=pointmap.points[pix[:, 1], pix[:, 0]].copy(),
        sfm=scene.xyz[idx[keep]].copy(),
        pixels=pix,
        sfm_ids=ids[keep],
    )
