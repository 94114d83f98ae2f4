"""RANSAC similarity alignment of dense points onto SfM points."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import AllSamplesDegenerate, DegenerateConfiguration, TooFewCorrespondences
from .geometry import SimTransform, apply_sim3
from .procrustes import alignment_residuals, solve_similarity
from .scene_io import DensePointmap

logger = logging.getLogger(__name__)

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RansacParams:
    sample_size: int = 4
    epsilon: float = 0.05
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.sample_size < 3:
            raise ValueError("sample_size must be >= 3")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass(frozen=True)
class GlobalAlignment:
    """Winning model and the inlier/outlier split of the correspondences.

    ``inliers`` and ``outliers`` are sorted index arrays into the
    correspondence set; ``outlier_sfm`` holds the SfM points of the outliers.
    """

    transform: SimTransform
    inliers: np.ndarray
    outliers: np.ndarray
    outlier_sfm: np.ndarray
    iterations_run: int
    degenerate_iterations: int = 0
    best_iteration: int = -1
    refit: bool = False


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Independent stream for one iteration, keyed on ``(seed, iteration)``.

    Philox is counter-based, so streams do not depend on evaluation order.
    """
    key = np.array([seed & _U64, iteration & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _unit_residuals(T, src, dst, units, num_units):
    res = alignment_residuals(T, src, dst)
    if units is None:
        return res
    out = np.zeros(num_units)
    np.maximum.at(out, units, res)
    return out


def ransac_fit(source, target, params: RansacParams, units=None):
    """Core RANSAC loop over generic point pairs.

    ``units`` optionally groups point pairs (e.g. the four points of one
    camera): sampling draws whole units and a unit's residual is the max
    over its points.  Returns ``(transform, unit_residuals, best_iteration,
    degenerate_count)``.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if units is None:
        num_units = len(src)
        members = None
    else:
        units = np.asarray(units, dtype=np.int64)
        num_units = int(units.max()) + 1 if len(units) else 0
        order = np.argsort(units, kind="stable")
        bounds = np.searchsorted(units[order], np.arange(num_units + 1))
        members = [order[bounds[k]:bounds[k + 1]] for k in range(num_units)]
    n = params.sample_size
    if num_units < n:
        raise TooFewCorrespondences(f"{num_units} available, sample size is {n}")

    best = None
    best_count = 0
    best_iter = -1
    first_valid = None
    degenerate = 0
    for it in range(params.iterations):
        sample = iteration_rng(params.seed, it).choice(num_units, size=n, replace=False)
        if members is not None:
            sample = np.concatenate([members[k] for k in sample])
        try:
            model = solve_similarity(src[sample], dst[sample])
        except DegenerateConfiguration:
            degenerate += 1
            continue
        if first_valid is None:
            first_valid = (model, it)
        count = int(np.count_nonzero(
            _unit_residuals(model, src, dst, units, num_units) < params.epsilon))
        # strict: ties keep the earlier iteration
        if count > best_count:
            best, best_count, best_iter = model, count, it

    if best is None:
        if first_valid is None:
            raise AllSamplesDegenerate(
                f"all {params.iterations} samples were degenerate")
        best, best_iter = first_valid
    logger.debug("ransac: best iteration %d with %d inliers (%d degenerate samples)",
                 best_iter, best_count, degenerate)
    return best, _unit_residuals(best, src, dst, units, num_units), best_iter, degenerate


def classify(corr: CorrespondenceSet, transform: SimTransform, epsilon: float):
    res = alignment_residuals(transform, corr.dense, corr.sfm)
    inl = res < epsilon
    return np.flatnonzero(inl), np.flatnonzero(~inl)


def ransac_align(corr: CorrespondenceSet, params: RansacParams,
                 refit: bool = False) -> GlobalAlignment:
    """Robustly estimate the global dense-to-SfM similarity transform.

    Runs exactly ``params.iterations`` minimal-sample fits and keeps the
    model with the most correspondences under ``epsilon``.  The split into
    inliers and outliers is recomputed once under the kept model.  With
    ``refit`` the kept model is re-estimated on all its inliers first.
    """
    if len(corr) < params.sample_size:
        raise TooFewCorrespondences(
            f"{len(corr)} correspondences, sample size is {params.sample_size}")
    model, _, best_iter, degenerate = ransac_fit(corr.dense, corr.sfm, params)
    inliers, outliers = classify(corr, model, params.epsilon)
    if refit and len(inliers) >= 3:
        try:
            model = solve_similarity(corr.dense[inliers], corr.sfm[inliers])
            inliers, outliers = classify(corr, model, params.epsilon)
        except DegenerateConfiguration:
            logger.warning("refit on inliers was degenerate; keeping sample model")
    return GlobalAlignment(
        transform=model,
        inliers=inliers,
        outliers=outliers,
        outlier_sfm=corr.sfm[outliers].copy(),
        iterations_run=params.iterations,
        degenerate_iterations=degenerate,
        best_iteration=best_iter,
        refit=refit,
    )


def apply_global(alignment: GlobalAlignment, pointmap: DensePointmap) -> DensePointmap:
    """Move every pointmap pixel by the global transform."""
    pts = apply_sim3(alignment.transform, pointmap.flat()).reshape(pointmap.points.shape)
    return DensePointmap(pointmap.view_id, pts)
