"""Mask-guided local alignment of RANSAC outliers and final cloud fusion.

Outlier correspondences are grouped into regions by repeatedly prompting a
mask provider (an interactive segmenter, or one of the stand-ins below).
Each kept region gets its own similarity transform; everything outside the
kept regions keeps the global transform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import (
    DegenerateConfiguration,
    DimensionMismatch,
    MalformedFile,
    MaskDimensionMismatch,
    ProviderFailure,
)
from .geometry import SimTransform, apply_sim3
from .procrustes import solve_similarity
from .ransac import GlobalAlignment, iteration_rng
from .scene_io import BinaryMask, DensePointmap, LabelMap, SfMScene, read_mask

logger = logging.getLogger(__name__)

MIN_THRESHOLD = 3
MAX_REPROMPTS = 8

TAG_SFM = -1
TAG_GLOBAL = 0

# RNG stream id kept apart from the RANSAC iteration streams
_GROUPING_STREAM = (1 << 64) - 1


class MaskProvider(Protocol):
    """Prompt-to-mask oracle over the reference view.

    ``prompt`` returns a mask of size ``(height, width)``; an empty mask
    means the provider declined the prompt.
    """

    width: int
    height: int

    def prompt(self, pixels: np.ndarray) -> BinaryMask: ...


# ── Providers ───────────────────────────────────────────────────────────

class LabelMapProvider:
    """Answers prompts with the footprint of the prompted pixels' label.

    Mixed prompts resolve to the most frequent nonzero label (ties: lowest
    label).  Prompts landing only on label 0 are refused.
    """

    def __init__(self, labelmap: LabelMap):
        self.labels = labelmap.labels
        self.height, self.width = self.labels.shape

    def prompt(self, pixels) -> BinaryMask:
        pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        labs = self.labels[pix[:, 1], pix[:, 0]]
        labs = labs[labs != 0]
        if len(labs) == 0:
            return BinaryMask.empty(self.width, self.height)
        values, counts = np.unique(labs, return_counts=True)
        label = values[np.argmax(counts)]
        return BinaryMask(self.labels == label)


def oracle_provider(labelmap: LabelMap) -> LabelMapProvider:
    return LabelMapProvider(labelmap)


class FileMaskProvider:
    """Serves masks precomputed offline (e.g. by SAM).

    ``index.txt`` in the mask directory lists ``U V mask_filename.pgm``
    lines: the prompt pixel each mask was generated from.  A prompt is
    answered with the mask whose recorded prompt is nearest to any
    prompted pixel among masks covering at least one prompted pixel; ties
    go to the earlier index line.
    """

    def __init__(self, mask_dir, width: int, height: int, index_name: str = "index.txt"):
        self.mask_dir = Path(mask_dir)
        self.width = width
        self.height = height
        index_path = self.mask_dir / index_name
        entries = []
        try:
            text = index_path.read_text(encoding="utf-8")
        except OSError as exc:
            raise MalformedFile(f"{index_path}: {exc}") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            try:
                if len(tok) != 3:
                    raise ValueError(f"expected 3 fields, got {len(tok)}")
                entries.append((float(tok[0]), float(tok[1]), tok[2]))
            except ValueError as exc:
                raise MalformedFile(f"{index_path}:{lineno}: {exc}") from None
        self.prompts = np.array([(u, v) for u, v, _ in entries]).reshape(-1, 2)
        self.files = [name for _, _, name in entries]
        self._cache: dict[int, BinaryMask] = {}

    def _mask(self, i: int) -> BinaryMask:
        if i not in self._cache:
            path = self.mask_dir / self.files[i]
            try:
                self._cache[i] = read_mask(path, (self.width, self.height))
            except OSError as exc:
                raise ProviderFailure(f"{path}: {exc}") from None
            except DimensionMismatch as exc:
                raise MaskDimensionMismatch(str(exc)) from None
        return self._cache[i]

    def prompt(self, pixels) -> BinaryMask:
        pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        if len(self.files) == 0 or len(pix) == 0:
            return BinaryMask.empty(self.width, self.height)
        d = np.linalg.norm(self.prompts[:, None, :] - pix[None, :, :], axis=2).min(axis=1)
        for i in np.argsort(d, kind="stable"):
            mask = self._mask(int(i))
            if mask.bits[pix[:, 1], pix[:, 0]].any():
                return mask
        return BinaryMask.empty(self.width, self.height)


def file_provider(mask_dir, width: int, height: int) -> FileMaskProvider:
    return FileMaskProvider(mask_dir, width, height)


# ── Grouping ────────────────────────────────────────────────────────────

def _ask(provider: MaskProvider, pixels: np.ndarray) -> np.ndarray:
    mask = provider.prompt(pixels)
    if mask.bits.shape != (provider.height, provider.width):
        raise MaskDimensionMismatch(
            f"provider returned {mask.width}x{mask.height}, "
            f"expected {provider.width}x{provider.height}")
    return mask.bits


def group_outliers(outlier_pixels, provider: MaskProvider, threshold: int,
                   seed: int, max_reprompts: int = MAX_REPROMPTS) -> list[BinaryMask]:
    """Grow disjoint masks around outlier pixels.

    A random unconsumed outlier is used as a prompt.  The mask is kept when
    more than ``threshold`` outliers fall inside it; otherwise the provider
    is re-prompted with all outliers inside the current mask until the
    count passes, stops growing, or ``max_reprompts`` is hit, and the seed
    and the outliers inside are then discarded.  Previously kept masks are
    subtracted from every new mask.

    Args:
        outlier_pixels: ``(K, 2)`` integer ``(u, v)`` pixels of the outliers.
        provider: mask source for the reference view.
        threshold: minimum exclusive outlier count for a kept mask (>= 3).
        seed: seed for the choice of prompt outliers.

    Returns:
        Kept masks in the order they were found.
    """
    if threshold < MIN_THRESHOLD:
        raise ValueError(f"threshold must be >= {MIN_THRESHOLD}")
    pix = np.asarray(outlier_pixels, dtype=np.int64).reshape(-1, 2)
    rng = iteration_rng(seed, _GROUPING_STREAM)
    taken = np.zeros((provider.height, provider.width), dtype=bool)
    consumed = np.zeros(len(pix), dtype=bool)
    kept: list[BinaryMask] = []

    def inside(bits):
        return bits[pix[:, 1], pix[:, 0]]

    while not consumed.all():
        pending = np.flatnonzero(~consumed)
        logger.debug("grouping: %d outliers unconsumed", len(pending))
        seed_idx = pending[rng.integers(len(pending))]
        try:
            bits = _ask(provider, pix[seed_idx]) & ~taken
            members = inside(bits)
            count = int(members.sum())
            attempts = 0
            while count <= threshold and count > 0 and attempts < max_reprompts:
                attempts += 1
                new_bits = _ask(provider, pix[members]) & ~taken
                new_members = inside(new_bits)
                new_count = int(new_members.sum())
                if new_count <= count:
                    break
                bits, members, count = new_bits, new_members, new_count
        except ProviderFailure as exc:
            logger.warning("mask provider failed on outlier %d: %s", seed_idx, exc)
            consumed[seed_idx] = True
            continue

        consumed[seed_idx] = True
        consumed |= members
        if count > threshold:
            taken |= bits
            kept.append(BinaryMask(bits))
        else:
            logger.debug("discarded mask around outlier %d (%d outliers)", seed_idx, count)
    return kept


@dataclass(frozen=True)
class OutlierGroup:
    """One kept mask, its outlier members and its local transform.

    ``local_transform`` is ``None`` when the members could not determine a
    transform; such a group falls back to the global transform.
    """

    mask_id: int
    mask: BinaryMask
    member_indices: np.ndarray
    local_transform: SimTransform | None

    @property
    def discarded(self) -> bool:
        return self.local_transform is None


def solve_local(dense, sfm) -> SimTransform:
    """Local similarity transform of one group (plain Procrustes)."""
    return solve_similarity(dense, sfm)


def solve_groups(masks: list[BinaryMask], corr: CorrespondenceSet,
                 alignment: GlobalAlignment) -> list[OutlierGroup]:
    """Collect each mask's outliers and fit its local transform."""
    out_pix = corr.pixels[alignment.outliers]
    groups = []
    for k, mask in enumerate(masks, 1):
        members = alignment.outliers[mask.bits[out_pix[:, 1], out_pix[:, 0]]]
        try:
            T = solve_local(corr.dense[members], corr.sfm[members])
        except DegenerateConfiguration as exc:
            logger.warning("mask %d: %s; falling back to global transform", k, exc)
            T = None
        groups.append(OutlierGroup(k, mask, members, T))
    return groups


# ── Fusion ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FusedCloud:
    """Transformed dense points followed by the untouched SfM points.

    ``tags`` is 0 for globally transformed dense points, ``k`` for points
    moved by local mask ``k`` and -1 for SfM points.  Dense points come
    first, in row-major pixel order.
    """

    xyz: np.ndarray
    rgb: np.ndarray
    tags: np.ndarray
    num_dense: int
    semantic: bool

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def dense_xyz(self) -> np.ndarray:
        return self.xyz[:self.num_dense]


def region_map(groups: list[OutlierGroup], width: int, height: int) -> np.ndarray:
    """Per-pixel region tag; 0 marks the global (inlier) region."""
    regions = np.zeros((height, width), dtype=np.int32)
    covered = np.zeros((height, width), dtype=bool)
    for g in groups:
        if g.mask.bits.shape != (height, width):
            raise MaskDimensionMismatch(
                f"mask {g.mask_id} is {g.mask.width}x{g.mask.height}, "
                f"pointmap is {width}x{height}")
        if np.any(covered & g.mask.bits):
            raise ValueError(f"mask {g.mask_id} overlaps an earlier mask")
        covered |= g.mask.bits
        if not g.discarded:
            regions[g.mask.bits] = g.mask_id
    return regions


def fuse(pointmap: DensePointmap, alignment: GlobalAlignment,
         groups: list[OutlierGroup] | None, sfm: SfMScene,
         colors: np.ndarray | None = None) -> FusedCloud:
    """Transform each pixel by its region's transform and append the SfM cloud.

    Args:
        pointmap: reference-view dense points.
        alignment: global RANSAC result; its transform covers region 0.
        groups: kept masks with local transforms, or ``None`` for global only.
        sfm: sparse scene whose points are appended untransformed.
        colors: optional ``(H, W, 3)`` uint8 colors for the dense points;
            white when omitted.
    """
    h, w = pointmap.height, pointmap.width
    groups = groups or []
    regions = region_map(groups, w, h).reshape(-1)
    src = pointmap.flat()
    out = apply_sim3(alignment.transform, src)
    for g in groups:
        if g.discarded:
            continue
        sel = regions == g.mask_id
        out[sel] = apply_sim3(g.local_transform, src[sel])

    if colors is None:
        dense_rgb = np.full((h * w, 3), 255, dtype=np.uint8)
    else:
        colors = np.asarray(colors, dtype=np.uint8)
        if colors.shape != (h, w, 3):
            raise MaskDimensionMismatch("color grid does not match the pointmap")
        dense_rgb = colors.reshape(-1, 3)

    return FusedCloud(
        xyz=np.concatenate([out, sfm.xyz]),
        rgb=np.concatenate([dense_rgb, sfm.rgb]),
        tags=np.concatenate([regions, np.full(len(sfm), TAG_SFM, dtype=np.int32)]),
        num_dense=h * w,
        semantic=any(not g.discarded for g in groups),
    )
