import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfmfuse.correspondence import (
    build_correspondences,
    project_point,
    round_half_away,
    select_reference_view,
)
from sfmfuse.errors import EmptyScene, ViewMismatch
from sfmfuse.geometry import SimTransform, apply_sim3, random_rotation
from sfmfuse.scene_io import CameraView, DensePointmap, SfMScene
from sfmfuse.synth import SceneSpec, generate


def camera(view=0, f=100.0, c=50.0, size=(101, 101), pose=None):
    return CameraView(view, pose or SimTransform.identity(), f, f, c, c, *size)


def scene_with(points, tracks, cameras):
    n = len(points)
    return SfMScene(np.arange(n), points, np.zeros((n, 3)), tracks,
                    {c.view_id: c for c in cameras})


class TestProjectPoint:
    def test_on_axis(self):
        assert project_point(camera(f=1.0, c=0.0), [0, 0, 1]) == (0.0, 0.0)

    def test_analytic(self):
        assert project_point(camera(), [0.5, 0, 1]) == (100.0, 50.0)

    def test_behind(self):
        assert project_point(camera(), [0, 0, -1]) is None
        assert project_point(camera(), [0, 0, 0]) is None

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.floats(0.01, 100))
    def test_scale_covariance(self, seed, k):
        rng = np.random.default_rng(seed)
        pose = SimTransform(1.0, random_rotation(rng), rng.normal(size=3))
        cam = camera(pose=pose)
        q = np.append(rng.normal(size=2), rng.uniform(0.5, 5))
        # scale in the camera frame, then map back to the world
        inv = SimTransform(1.0, pose.R.T, -pose.R.T @ pose.t)
        a = project_point(cam, apply_sim3(inv, q))
        b = project_point(cam, apply_sim3(inv, k * q))
        assert np.allclose(a, b, atol=1e-9 * max(1.0, abs(a[0]), abs(a[1])))


class TestReferenceView:
    def test_single_camera(self):
        s = scene_with(np.zeros((3, 3)), [[(0, 1, 1)]] * 3, [camera(0)])
        assert select_reference_view(s) == 0

    def test_more_visible_wins(self):
        tracks = [[(1, 1, 1), (2, 1, 1)]] * 5 + [[(2, 1, 1)]] * 2
        s = scene_with(np.zeros((7, 3)), tracks, [camera(1), camera(2)])
        assert select_reference_view(s) == 2

    def test_tie_lowest_id(self):
        tracks = [[(4, 1, 1), (3, 1, 1)]] * 2
        s = scene_with(np.zeros((2, 3)), tracks, [camera(4), camera(3)])
        assert select_reference_view(s) == 3

    def test_repeated_observation_counts_once(self):
        tracks = [[(1, 1, 1), (1, 2, 2)], [(2, 1, 1)], [(2, 3, 3)]]
        s = scene_with(np.zeros((3, 3)), tracks, [camera(1), camera(2)])
        assert select_reference_view(s) == 2

    def test_empty(self):
        with pytest.raises(EmptyScene):
            select_reference_view(scene_with(np.zeros((0, 3)), [], [camera(0)]))
        with pytest.raises(EmptyScene):
            select_reference_view(scene_with(np.zeros((1, 3)), [[]], []))

    def test_matches_exhaustive_count(self):
        bundle = generate(SceneSpec(num_regions=2, points_per_region=30, num_cameras=4, seed=3))
        scene = bundle.scene
        rng = np.random.default_rng(0)
        # thin the tracks so views see different numbers of points
        scene.tracks = [t[rng.random(len(t)) < 0.6] for t in scene.tracks]
        counts = {v: 0 for v in scene.cameras}
        for track in scene.tracks:
            for v in set(int(x) for x in track[:, 0]):
                counts[v] += 1
        best = max(counts.values())
        assert select_reference_view(scene) == min(v for v, c in counts.items() if c == best)


class TestBuildCorrespondences:
    def _grid(self, w=6, h=4):
        pts = np.arange(w * h * 3, dtype=np.float64).reshape(h, w, 3)
        return DensePointmap(0, pts)

    def test_single_known_pixel(self):
        # fx = 10, cx = 2.5: u = 10 * 0.05 / 1 + 2.5 = 3; cy = 1.5: v = 2
        cam = CameraView(0, SimTransform.identity(), 10.0, 10.0, 2.5, 1.5, 6, 4)
        scene = scene_with(np.array([[0.05, 0.05, 1.0]]), [[(0, 3, 2)]], [cam])
        corr = build_correspondences(scene, self._grid(), 0)
        assert len(corr) == 1
        assert corr.pixels.tolist() == [[3, 2]]
        assert corr.dense.tolist() == [self._grid().points[2, 3].tolist()]
        assert corr.sfm.tolist() == [[0.05, 0.05, 1.0]]

    def test_out_of_bounds_excluded(self):
        cam = CameraView(0, SimTransform.identity(), 10.0, 10.0, 2.5, 1.5, 6, 4)
        # u = 10 * (-0.75) + 2.5 = -5
        scene = scene_with(np.array([[-0.75, 0.0, 1.0]]), [[(0, 0, 0)]], [cam])
        assert len(build_correspondences(scene, self._grid(), 0)) == 0

    def test_behind_and_invisible_excluded(self):
        cam = CameraView(0, SimTransform.identity(), 10.0, 10.0, 2.5, 1.5, 6, 4)
        pts = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]])
        scene = scene_with(pts, [[(0, 1, 1)], []], [cam])
        assert len(build_correspondences(scene, self._grid(), 0)) == 0

    def test_collision_keeps_nearest_center(self):
        cam = CameraView(0, SimTransform.identity(), 10.0, 10.0, 2.5, 1.5, 6, 4)
        # both round to (3, 2); the second is closer to the pixel center
        pts = np.array([[0.08, 0.05, 1.0], [0.06, 0.05, 1.0], [0.06, 0.05, 1.0]])
        scene = SfMScene([10, 11, 12], pts, np.zeros((3, 3)), [[(0, 3, 2)]] * 3, {0: cam})
        corr = build_correspondences(scene, self._grid(), 0)
        assert corr.sfm_ids.tolist() == [11]

    def test_rounding_half_away_from_zero(self):
        assert round_half_away(np.array([0.5, 1.5, 2.5, -0.5, 2.49])).tolist() == [1, 2, 3, -1, 2]

    def test_view_mismatch(self):
        cam = camera(0)
        scene = scene_with(np.zeros((1, 3)), [[(0, 1, 1)]], [cam])
        with pytest.raises(ViewMismatch):
            build_correspondences(scene, DensePointmap(1, np.zeros((2, 2, 3))), 0)
        with pytest.raises(ViewMismatch):
            build_correspondences(scene, DensePointmap(5, np.zeros((2, 2, 3))), 5)

    def test_pixels_match_generator_records(self):
        bundle = generate(SceneSpec(num_regions=3, points_per_region=25, seed=11))
        corr = build_correspondences(bundle.scene, bundle.pointmap, bundle.reference_view)
        assert len(corr) == len(bundle.scene)
        assert np.all(np.diff(corr.sfm_ids) > 0)
        expected = bundle.truth_pixels[np.searchsorted(bundle.scene.point_ids, corr.sfm_ids)]
        assert np.array_equal(corr.pixels, expected)

    def test_true_transform_zero_residual_on_noiseless_scene(self):
        bundle = generate(SceneSpec(num_regions=1, points_per_region=30, noise_sigma=0.0, seed=2))
        corr = build_correspondences(bundle.scene, bundle.pointmap, 0)
        moved = apply_sim3(bundle.transforms[0], corr.dense)
        assert np.abs(moved - corr.sfm).max() < 1e-9

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_size_bounded_by_visible(self, seed):
        rng = np.random.default_rng(seed)
        cam = camera(f=20.0, c=5.0, size=(11, 11))
        n = int(rng.integers(1, 40))
        pts = np.column_stack([rng.uniform(-1, 1, (n, 2)), rng.uniform(-1, 3, n)])
        tracks = [[(0, 1, 1)] if rng.random() < 0.7 else [] for _ in range(n)]
        scene = scene_with(pts, tracks, [cam])
        corr = build_correspondences(scene, DensePointmap(0, rng.normal(size=(11, 11, 3))), 0)
        assert len(corr) <= int(scene.visible_in(0).sum())
        assert len(set(corr.sfm_ids.tolist())) == len(corr)
        assert len({tuple(p) for p in corr.pixels.tolist()}) == len(corr)
        assert np.all((corr.pixels >= 0) & (corr.pixels < 11))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), regions=st.integers(1, 3))
def test_noiseless_truth_residual_property(seed, regions):
    bundle = generate(SceneSpec(num_regions=regions, points_per_region=8, noise_sigma=0.0,
                                width=32, height=24, seed=seed))
    corr = build_correspondences(bundle.scene, bundle.pointmap, 0)
    region = bundle.truth_region[np.searchsorted(bundle.scene.point_ids, corr.sfm_ids)]
    for k, T in enumerate(bundle.transforms):
        sel = region == k
        assert np.abs(apply_sim3(T, corr.dense[sel]) - corr.sfm[sel]).max() < 1e-9
