"""Synthetic piecewise-rigid scenes with full ground truth.

The reference camera looks at a background surface with a few box-shaped
foreground objects; the label map records which region each pixel belongs
to.  SfM points are exact surface samples.  The dense pointmap of region
``k`` is the true surface mapped through the inverse of region ``k``'s
transform, plus Gaussian noise, so aligning dense onto SfM has to recover
each region's transform.

Randomness uses numpy's Philox4x64-10 counter-based generator keyed by the
spec seed; outputs are identical across runs and platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import IndexMismatch, InvalidSpec
from .geometry import SimTransform, apply_sim3, compose_sim3, invert_sim3, rotation_about_axis
from .ransac import GlobalAlignment
from .scene_io import (
    CameraView,
    DensePointmap,
    LabelMap,
    SfMScene,
    write_cameras,
    write_labelmap,
    write_pointmap,
    write_points,
)
from .semantic import FusedCloud

SCENE_EXTENT = 1.0
RING_RADIUS = 3.0 * SCENE_EXTENT

BUNDLE_FILES = ("cameras.txt", "points.txt", "labels.pgm", "truth.json")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([seed & ((1 << 64) - 1), stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def default_region_transforms(num_regions: int, seed: int) -> list[SimTransform]:
    """Global transform plus per-region perturbations of it.

    Region 0 gets a moderate similarity transform.  Every other region is
    region 0 composed with a perturbation of 4-8 % scale, 2-5 degrees of
    rotation and 0.05-0.1 scene units of translation.
    """
    rng = make_rng(seed, 1)

    def axis():
        a = rng.normal(size=3)
        return a / np.linalg.norm(a)

    base = SimTransform(rng.uniform(0.8, 1.25),
                        rotation_about_axis(axis(), np.radians(rng.uniform(5, 20))),
                        rng.uniform(-0.3, 0.3, size=3))
    out = [base]
    for _ in range(1, num_regions):
        ds = rng.uniform(0.04, 0.08) * rng.choice([-1.0, 1.0])
        delta = SimTransform(1.0 + ds,
                             rotation_about_axis(axis(), np.radians(rng.uniform(2, 5))),
                             axis() * rng.uniform(0.05, 0.1))
        out.append(compose_sim3(base, delta))
    return out


@dataclass
class SceneSpec:
    num_regions: int = 3
    points_per_region: int = 40
    region_transforms: list[SimTransform] | None = None
    noise_sigma: float = 0.001
    outlier_fraction: float = 0.0
    num_cameras: int = 4
    width: int = 64
    height: int = 48
    seed: int = 0

    def validate(self) -> None:
        if self.num_regions < 1:
            raise InvalidSpec("num_regions must be >= 1")
        if self.points_per_region < 3:
            raise InvalidSpec("points_per_region must be >= 3")
        if self.region_transforms is not None and len(self.region_transforms) != self.num_regions:
            raise InvalidSpec("need one transform per region")
        if not (self.noise_sigma >= 0 and np.isfinite(self.noise_sigma)):
            raise InvalidSpec("noise_sigma must be a non-negative number")
        if not 0 <= self.outlier_fraction < 1:
            raise InvalidSpec("outlier_fraction must lie in [0, 1)")
        if self.num_cameras < 1:
            raise InvalidSpec("num_cameras must be >= 1")
        if self.width < 8 or self.height < 8:
            raise InvalidSpec("image must be at least 8x8")

    def region_point_count(self, region: int) -> int:
        """SfM samples in a region; the background gets twice the share."""
        return 2 * self.points_per_region if region == 0 else self.points_per_region

    def transforms(self) -> list[SimTransform]:
        if self.region_transforms is not None:
            return list(self.region_transforms)
        return default_region_transforms(self.num_regions, self.seed)

    def to_dict(self) -> dict:
        return {"num_regions": self.num_regions,
                "points_per_region": self.points_per_region,
                "region_transforms": [T.to_dict() for T in self.transforms()],
                "noise_sigma": self.noise_sigma,
                "outlier_fraction": self.outlier_fraction,
                "num_cameras": self.num_cameras,
                "width": self.width, "height": self.height,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        d = dict(d)
        d["region_transforms"] = [SimTransform.from_dict(t) for t in d["region_transforms"]]
        return cls(**d)


@dataclass
class GroundTruthBundle:
    """Everything :func:`generate` produces.

    Per-correspondence records are indexed like ``scene.point_ids``:
    ``truth_pixels`` (the reference-view pixel), ``truth_region``,
    ``truth_targets`` (the exact SfM-frame position) and ``truth_inlier``
    (region 0 and not corrupted).  ``target_grid`` holds the true position
    of every reference pixel and ``corrupted`` flags pixels whose dense
    value was replaced by a gross outlier.
    """

    spec: SceneSpec
    transforms: list[SimTransform]
    reference_view: int
    pointmap: DensePointmap
    labelmap: LabelMap
    scene: SfMScene
    truth_pixels: np.ndarray
    truth_region: np.ndarray
    truth_targets: np.ndarray
    truth_inlier: np.ndarray
    target_grid: np.ndarray
    region_grid: np.ndarray
    corrupted: np.ndarray = field(repr=False)

    @property
    def cameras(self) -> dict[int, CameraView]:
        return self.scene.cameras

    def truth_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "reference_view": self.reference_view,
            "records": [
                {"sfm_id": int(pid), "pixel": [int(u), int(v)], "region": int(r),
                 "inlier": bool(inl)}
                for pid, (u, v), r, inl in zip(self.scene.point_ids, self.truth_pixels,
                                               self.truth_region, self.truth_inlier)
            ],
        }


def _look_at(center: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera at ``center`` facing the origin, y down."""
    z = -center / np.linalg.norm(center)
    up = np.array([0.0, -1.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def _region_layout(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    W, H = spec.width, spec.height
    regions = np.zeros((H, W), dtype=np.int64)
    n_obj = spec.num_regions - 1
    if n_obj == 0:
        return regions
    g = int(np.ceil(np.sqrt(n_obj)))
    cw, ch = W / g, H / g
    for k in range(n_obj):
        gx, gy = k % g, k // g
        rw = max(2, int(cw * rng.uniform(0.5, 0.8)))
        rh = max(2, int(ch * rng.uniform(0.5, 0.8)))
        x0 = int(gx * cw + rng.uniform(0.1, 0.9) * (cw - rw))
        y0 = int(gy * ch + rng.uniform(0.1, 0.9) * (ch - rh))
        regions[y0:y0 + rh, x0:x0 + rw] = k + 1
    return regions


def generate(spec: SceneSpec) -> GroundTruthBundle:
    """Build a deterministic synthetic scene from ``spec``."""
    spec.validate()
    transforms = spec.transforms()
    rng = make_rng(spec.seed)
    W, H = spec.width, spec.height

    # reference camera and per-pixel true surface
    angles = 2 * np.pi * np.arange(spec.num_cameras) / spec.num_cameras
    centers = RING_RADIUS * np.stack([np.sin(angles), 0.1 * np.ones_like(angles),
                                      np.cos(angles)], axis=1)
    ref_R = _look_at(centers[0])
    f_ref = 0.5 * min(W, H) * RING_RADIUS / (0.8 * SCENE_EXTENT)
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0

    regions = _region_layout(spec, rng)
    uu, vv = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    nu, nv = (uu - cx) / W, (vv - cy) / H
    depth = RING_RADIUS + 0.5 * SCENE_EXTENT + 0.15 * nu - 0.1 * nv
    for k in range(1, spec.num_regions):
        off = rng.uniform(-0.45, -0.15) * SCENE_EXTENT
        a, b = rng.uniform(-0.2, 0.2, size=2)
        sel = regions == k
        depth[sel] = RING_RADIUS + off + a * nu[sel] + b * nv[sel]
    p_cam = np.stack([depth * (uu - cx) / f_ref, depth * (vv - cy) / f_ref, depth], axis=-1)
    target_grid = p_cam @ ref_R + centers[0]

    # dense pointmap: inverse region transform plus noise
    dense = np.empty_like(target_grid)
    for k, T in enumerate(transforms):
        sel = regions == k
        dense[sel] = apply_sim3(invert_sim3(T), target_grid[sel])
    if spec.noise_sigma > 0:
        dense += rng.normal(scale=spec.noise_sigma, size=dense.shape)

    # SfM samples per region
    pix_list, reg_list = [], []
    for k in range(spec.num_regions):
        flat = np.flatnonzero(regions.ravel() == k)
        count = spec.region_point_count(k)
        if len(flat) < count:
            raise InvalidSpec(f"region {k} has only {len(flat)} pixels, needs {count}")
        chosen = np.sort(rng.choice(flat, size=count, replace=False))
        pix_list.append(np.stack([chosen % W, chosen // W], axis=1))
        reg_list.append(np.full(len(chosen), k))
    pixels = np.concatenate(pix_list)
    point_region = np.concatenate(reg_list)
    xyz = target_grid[pixels[:, 1], pixels[:, 0]]
    n_pts = len(xyz)

    # gross outliers: corrupt the dense value at a subset of SfM pixels
    corrupted = np.zeros((H, W), dtype=bool)
    n_bad = int(round(spec.outlier_fraction * n_pts))
    gross = np.zeros(n_pts, dtype=bool)
    if n_bad:
        bad = rng.choice(n_pts, size=n_bad, replace=False)
        gross[bad] = True
        lo, hi = dense.reshape(-1, 3).min(axis=0), dense.reshape(-1, 3).max(axis=0)
        dense[pixels[bad, 1], pixels[bad, 0]] = rng.uniform(lo, hi, size=(n_bad, 3))
        corrupted[pixels[bad, 1], pixels[bad, 0]] = True

    # cameras on the ring, each zoomed so every SfM point projects inside
    cameras: dict[int, CameraView] = {}
    for i, c in enumerate(centers):
        R = ref_R if i == 0 else _look_at(c)
        t = -R @ c
        if i == 0:
            f = f_ref
        else:
            q = xyz @ R.T + t
            ratio = np.abs(q[:, :2] / q[:, 2:3]).max()
            f = 0.45 * min(W, H) / max(ratio, 1e-9)
        cameras[i] = CameraView(i, SimTransform(1.0, R, t), f, f, cx, cy, W, H)

    tracks: list[list] = [[] for _ in range(n_pts)]
    for i, cam in cameras.items():
        q = apply_sim3(cam.world_to_camera, xyz)
        u = cam.fx * q[:, 0] / q[:, 2] + cam.cx
        v = cam.fy * q[:, 1] / q[:, 2] + cam.cy
        if i == 0:
            # exact pixel centers; projection can land a rounding error below 0
            u, v = pixels[:, 0].astype(np.float64), pixels[:, 1].astype(np.float64)
        ok = (q[:, 2] > 0) & (u >= 0) & (u < W) & (v >= 0) & (v < H)
        for p in np.flatnonzero(ok):
            tracks[p].append((i, u[p], v[p]))

    palette = np.array([[200, 200, 200]] + [[(60 + 40 * k) % 256, (180 + 90 * k) % 256,
                                              (90 + 150 * k) % 256]
                                             for k in range(1, spec.num_regions)])
    scene = SfMScene(np.arange(n_pts), xyz, palette[point_region].astype(np.uint8),
                     [np.array(t, dtype=np.float64).reshape(-1, 3) for t in tracks], cameras)
    scene.validate()

    return GroundTruthBundle(
        spec=spec,
        transforms=transforms,
        reference_view=0,
        pointmap=DensePointmap(0, dense),
        labelmap=LabelMap(regions + 1),
        scene=scene,
        truth_pixels=pixels,
        truth_region=point_region,
        truth_targets=xyz.copy(),
        truth_inlier=(point_region == 0) & ~gross,
        target_grid=target_grid,
        region_grid=regions,
        corrupted=corrupted,
    )


def write_bundle(bundle: GroundTruthBundle, out_dir) -> list[Path]:
    """Write the bundle as ``view_<ref>.pmap``, PGM labels, SfM text files and truth.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"view_{bundle.reference_view}.pmap", *(out / n for n in BUNDLE_FILES)]
    write_pointmap(bundle.pointmap, paths[0])
    write_cameras(bundle.cameras.values(), paths[1])
    write_points(bundle.scene, paths[2])
    write_labelmap(bundle.labelmap, paths[3])
    paths[4].write_text(json.dumps(bundle.truth_dict(), indent=2) + "\n", encoding="utf-8")
    return paths


def load_truth(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ── Scoring ─────────────────────────────────────────────────────────────

def _rmse(err: np.ndarray) -> float:
    return float(np.sqrt(np.mean(err ** 2))) if len(err) else 0.0


def classification_metrics(predicted: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Precision and recall of boolean inlier predictions (NaN when undefined)."""
    tp = np.count_nonzero(predicted & truth)
    fp = np.count_nonzero(predicted & ~truth)
    fn = np.count_nonzero(~predicted & truth)
    precision = tp / (tp + fp) if tp + fp else float("nan")
    recall = tp / (tp + fn) if tp + fn else float("nan")
    return precision, recall


def score(bundle: GroundTruthBundle, fused: FusedCloud,
          alignment: GlobalAlignment | None = None,
          corr: CorrespondenceSet | None = None) -> dict:
    """Compare a fused cloud (and optionally the inlier split) to ground truth.

    The RMSE key is ``rmse_semantic`` when the cloud used local transforms
    and ``rmse_global_only`` otherwise; ``rmse_by_region`` splits it by true
    region.  Corrupted pixels are excluded.  Precision and recall are added
    when ``alignment`` and its correspondence set are given.
    """
    H, W = bundle.region_grid.shape
    if fused.num_dense != H * W or len(fused) - fused.num_dense != len(bundle.scene):
        raise IndexMismatch("fused cloud does not match the bundle's dimensions")
    err = np.linalg.norm(fused.dense_xyz - bundle.target_grid.reshape(-1, 3), axis=1)
    valid = ~bundle.corrupted.ravel()
    regions = bundle.region_grid.ravel()
    out = {
        "rmse_semantic" if fused.semantic else "rmse_global_only": _rmse(err[valid]),
        "rmse_by_region": {int(k): _rmse(err[valid & (regions == k)])
                           for k in range(bundle.spec.num_regions)},
    }
    if alignment is not None:
        if corr is None:
            raise ValueError("scoring the inlier split needs the correspondence set")
        lookup = {int(pid): i for i, pid in enumerate(bundle.scene.point_ids)}
        try:
            rows = np.array([lookup[int(pid)] for pid in corr.sfm_ids], dtype=np.int64)
        except KeyError as exc:
            raise IndexMismatch(f"unknown SfM id {exc}") from None
        predicted = np.zeros(len(corr), dtype=bool)
        predicted[alignment.inliers] = True
        out["inlier_precision"], out["inlier_recall"] = classification_metrics(
            predicted, bundle.truth_inlier[rows])
    return out
