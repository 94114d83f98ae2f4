"""End-to-end dense/SfM fusion: correspondences, RANSAC, masks, fusion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .correspondence import CorrespondenceSet, build_correspondences, select_reference_view
from .procrustes import alignment_residuals
from .ransac import GlobalAlignment, RansacParams, apply_global, ransac_align
from .scene_io import DensePointmap, SfMScene
from .semantic import (
    FusedCloud,
    MaskProvider,
    OutlierGroup,
    fuse,
    group_outliers,
    solve_groups,
)

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 10
EPSILON_SPACING_FACTOR = 0.05


def median_nn_spacing(points: np.ndarray) -> float:
    """Median distance from each point to its nearest neighbour."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 2:
        raise ValueError("need at least two points")
    dist, _ = cKDTree(points).query(points, k=2)
    return float(np.median(dist[:, 1]))


def default_epsilon(scene: SfMScene) -> float:
    return EPSILON_SPACING_FACTOR * median_nn_spacing(scene.xyz)


@dataclass
class AlignmentRun:
    reference_view: int
    correspondences: CorrespondenceSet
    alignment: GlobalAlignment
    groups: list[OutlierGroup] = field(default_factory=list)
    fused: FusedCloud | None = None


def run_pipeline(scene: SfMScene, pointmap: DensePointmap, params: RansacParams, *,
                 provider: MaskProvider | None = None, threshold: int = DEFAULT_THRESHOLD,
                 refit: bool = False, colors: np.ndarray | None = None) -> AlignmentRun:
    """Align ``pointmap`` onto ``scene``.

    ``pointmap`` must belong to the scene's reference view.  Without a
    ``provider`` the semantic stage is skipped and the whole pointmap gets
    the global transform.  The grouping stage reuses ``params.seed``.
    """
    view = select_reference_view(scene)
    corr = build_correspondences(scene, pointmap, view)
    logger.info("reference view %d: %d correspondences", view, len(corr))
    alignment = ransac_align(corr, params, refit=refit)
    logger.info("global alignment: %d inliers, %d outliers",
                len(alignment.inliers), len(alignment.outliers))
    groups: list[OutlierGroup] = []
    if provider is not None and len(alignment.outliers):
        masks = group_outliers(corr.pixels[alignment.outliers], provider, threshold,
                               params.seed)
        groups = solve_groups(masks, corr, alignment)
        logger.info("semantic stage: %d masks kept", len(groups))
    fused = fuse(pointmap, alignment, groups, scene, colors=colors)
    return AlignmentRun(view, corr, alignment, groups, fused)


def append_views(fused: FusedCloud, alignment: GlobalAlignment,
                 pointmaps: list[DensePointmap]) -> FusedCloud:
    """Add further views' pointmaps, globally transformed, after the dense block."""
    if not pointmaps:
        return fused
    extra = np.concatenate([apply_global(alignment, pm).flat() for pm in pointmaps])
    n = fused.num_dense
    return FusedCloud(
        xyz=np.concatenate([fused.xyz[:n], extra, fused.xyz[n:]]),
        rgb=np.concatenate([fused.rgb[:n], np.full((len(extra), 3), 255, np.uint8),
                            fused.rgb[n:]]),
        tags=np.concatenate([fused.tags[:n], np.zeros(len(extra), np.int32), fused.tags[n:]]),
        num_dense=n + len(extra),
        semantic=fused.semantic,
    )


def transforms_report(run: AlignmentRun) -> dict:
    """Machine-readable summary of the estimated transforms."""
    return {
        "reference_view": run.reference_view,
        "global": run.alignment.transform.to_dict(),
        "locals": [
            {"mask_id": g.mask_id, **g.local_transform.to_dict(),
             "support_count": int(len(g.member_indices))}
            for g in run.groups if not g.discarded
        ],
        "inlier_count": int(len(run.alignment.inliers)),
        "outlier_count": int(len(run.alignment.outliers)),
    }


def residual_summary(run: AlignmentRun) -> list[tuple[str, int, float, float]]:
    """``(region, support, mean residual, max residual)`` for each fitted region."""
    corr = run.correspondences
    rows = []

    def add(name, idx, T):
        if len(idx) == 0:
            rows.append((name, 0, float("nan"), float("nan")))
            return
        res = alignment_residuals(T, corr.dense[idx], corr.sfm[idx])
        rows.append((name, len(idx), float(res.mean()), float(res.max())))

    add("global (inliers)", run.alignment.inliers, run.alignment.transform)
    add("global (outliers)", run.alignment.outliers, run.alignment.transform)
    for g in run.groups:
        if g.discarded:
            rows.append((f"mask {g.mask_id} (discarded)", len(g.member_indices),
                         float("nan"), float("nan")))
        else:
            add(f"mask {g.mask_id}", g.member_indices, g.local_transform)
    return rows
