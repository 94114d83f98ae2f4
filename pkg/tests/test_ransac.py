import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfmfuse.correspondence import CorrespondenceSet
from sfmfuse.errors import AllSamplesDegenerate, TooFewCorrespondences
from sfmfuse.geometry import SimTransform, apply_sim3
from sfmfuse.procrustes import solve_similarity
from sfmfuse.ransac import RansacParams, apply_global, classify, ransac_align
from sfmfuse.scene_io import DensePointmap

from conftest import contaminated_pairs, random_sim3, transform_rms


def make_corr(dense, sfm):
    n = len(dense)
    pixels = np.column_stack([np.arange(n), np.zeros(n, dtype=int)])
    return CorrespondenceSet(0, np.asarray(dense, float), np.asarray(sfm, float),
                             pixels, np.arange(n))


def contaminated(rng, **kw):
    truth, dense, sfm = contaminated_pairs(rng, **kw)
    return truth, make_corr(dense, sfm)


class TestParams:
    @pytest.mark.parametrize("kw", [{"sample_size": 2}, {"epsilon": 0.0},
                                    {"epsilon": -1.0}, {"iterations": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RansacParams(**kw)


class TestRansacAlign:
    def test_pure_inliers(self, rng):
        truth = random_sim3(rng)
        dense = rng.normal(size=(30, 3))
        corr = make_corr(dense, apply_sim3(truth, dense))
        res = ransac_align(corr, RansacParams(epsilon=1e-6, iterations=20, seed=1))
        assert res.inliers.tolist() == list(range(30))
        assert len(res.outliers) == 0 and res.outlier_sfm.shape == (0, 3)
        assert abs(res.transform.s - truth.s) < 1e-9

    def test_contaminated_recovery(self, rng):
        sigma = 0.01
        truth, corr = contaminated(rng, sigma=sigma)
        res = ransac_align(corr, RansacParams(sample_size=4, epsilon=0.03,
                                              iterations=500, seed=7), refit=True)
        inl = set(res.inliers.tolist())
        assert len(inl & set(range(80))) >= 0.99 * 80
        assert not inl & set(range(80, 100))
        err = transform_rms(res.transform, truth, corr.dense[:80])
        assert err <= 5 * sigma / np.sqrt(80)

    def test_too_few(self):
        corr = make_corr(np.eye(3), np.eye(3))
        with pytest.raises(TooFewCorrespondences):
            ransac_align(corr, RansacParams(sample_size=4))

    def test_all_degenerate(self):
        dense = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
        with pytest.raises(AllSamplesDegenerate):
            ransac_align(make_corr(dense, dense), RansacParams(iterations=15))

    def test_deterministic(self, rng):
        _, corr = contaminated(rng)
        p = RansacParams(epsilon=0.03, iterations=100, seed=42)
        a, b = ransac_align(corr, p), ransac_align(corr, p)
        assert np.array_equal(a.transform.matrix(), b.transform.matrix())
        assert np.array_equal(a.inliers, b.inliers)
        assert a.best_iteration == b.best_iteration

    def test_classification_under_final_model(self, rng):
        _, corr = contaminated(rng)
        res = ransac_align(corr, RansacParams(epsilon=0.03, iterations=50, seed=3))
        inl, out = classify(corr, res.transform, 0.03)
        assert np.array_equal(inl, res.inliers) and np.array_equal(out, res.outliers)
        assert np.array_equal(res.outlier_sfm, corr.sfm[res.outliers])

    def test_beats_plain_procrustes_over_seeds(self):
        ransac_err, plain_err = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            truth, corr = contaminated(rng)
            res = ransac_align(corr, RansacParams(epsilon=0.03, iterations=200, seed=seed),
                               refit=True)
            plain = solve_similarity(corr.dense, corr.sfm)
            ransac_err.append(np.linalg.norm(res.transform.t - truth.t))
            plain_err.append(np.linalg.norm(plain.t - truth.t))
        assert np.median(ransac_err) <= np.median(plain_err)


class TestApplyGlobal:
    def test_moves_every_pixel(self, rng):
        T = SimTransform(2.0, np.eye(3), [1, 0, 0])
        pts = rng.normal(size=(4, 5, 3))
        res = ransac_align(make_corr(pts.reshape(-1, 3), apply_sim3(T, pts.reshape(-1, 3))),
                           RansacParams(epsilon=1e-6, iterations=5))
        out = apply_global(res, DensePointmap(3, pts))
        assert out.view_id == 3 and out.points.shape == pts.shape
        assert np.allclose(out.points, 2 * pts + [1, 0, 0], atol=1e-9)

    def test_identity_keeps_points(self, rng):
        pts = rng.normal(size=(3, 3, 3))
        res = ransac_align(make_corr(pts.reshape(-1, 3), pts.reshape(-1, 3)),
                           RansacParams(epsilon=1e-6, iterations=3))
        assert np.allclose(apply_global(res, DensePointmap(0, pts)).points, pts, atol=1e-12)


# ── Invariant suites (hypothesis, >= 200 cases each) ────────────────────

@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eps=st.floats(0.005, 1.0))
def test_partition_property(seed, eps):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 40))
    dense = rng.normal(size=(n, 3))
    sfm = apply_sim3(random_sim3(rng), dense) + rng.normal(scale=0.05, size=(n, 3))
    res = ransac_align(make_corr(dense, sfm), RansacParams(epsilon=eps, iterations=10, seed=seed))
    both = np.concatenate([res.inliers, res.outliers])
    assert sorted(both.tolist()) == list(range(n))
    assert len(np.intersect1d(res.inliers, res.outliers)) == 0


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_monotone_in_iterations_property(seed):
    # more iterations extend the same sample sequence, so the count can only grow
    rng = np.random.default_rng(seed)
    _, corr = contaminated(rng, n_in=20, n_out=10, sigma=0.02)
    short = ransac_align(corr, RansacParams(epsilon=0.05, iterations=5, seed=seed))
    long = ransac_align(corr, RansacParams(epsilon=0.05, iterations=25, seed=seed))
    assert len(long.inliers) >= len(short.inliers)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_determinism_property(seed):
    rng = np.random.default_rng(seed)
    _, corr = contaminated(rng, n_in=15, n_out=5)
    p = RansacParams(epsilon=0.03, iterations=15, seed=seed)
    a, b = ransac_align(corr, p), ransac_align(corr, p)
    assert a.transform.matrix().tobytes() == b.transform.matrix().tobytes()
    assert a.inliers.tobytes() == b.inliers.tobytes()
    assert a.outlier_sfm.tobytes() == b.outlier_sfm.tobytes()
