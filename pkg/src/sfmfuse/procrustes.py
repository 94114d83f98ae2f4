"""Closed-form least-squares similarity alignment (Umeyama)."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateConfiguration, NonFiniteInput
from .geometry import SimTransform, apply_sim3

# Relative singular-value floor below which a direction counts as missing.
RANK_TOL = 1e-10


def solve_similarity(source, target) -> SimTransform:
    """Find ``(s, R, t)`` minimizing ``sum ||s R source_i + t - target_i||^2``.

    Args:
        source: ``(N, 3)`` points to be moved, ``N >= 3``.
        target: ``(N, 3)`` matching destination points.

    Returns:
        The optimal similarity transform with ``det(R) = +1`` and ``s > 0``.

    Raises:
        DegenerateConfiguration: fewer than 3 pairs, collinear or coincident
            source points, or a rank-deficient cross-covariance.
        NonFiniteInput: any coordinate is NaN or infinite.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValueError("source and target differ in length")
    if len(src) < 3:
        raise DegenerateConfiguration(f"need at least 3 pairs, got {len(src)}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise NonFiniteInput("non-finite coordinates")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d

    sv_src = np.linalg.svd(xs, compute_uv=False)
    if sv_src[0] == 0 or sv_src[1] <= RANK_TOL * sv_src[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")

    n = len(src)
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    if D[0] == 0 or D[1] <= RANK_TOL * D[0]:
        raise DegenerateConfiguration("cross-covariance rank < 2; rotation ambiguous")

    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    var_src = np.sum(xs * xs) / n
    s = float(D @ S) / var_src
    if not s > 0:
        raise DegenerateConfiguration("non-positive optimal scale")
    t = mu_d - s * R @ mu_s
    return SimTransform(s, R, t)


def alignment_residuals(T: SimTransform, source, target) -> np.ndarray:
    """Per-pair Euclidean distance ``||T(source_i) - target_i||`` (not squared)."""
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValueError("source and target differ in length")
    return np.linalg.norm(apply_sim3(T, src) - dst, axis=1)
