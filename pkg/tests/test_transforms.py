"""Input/output rescalings: fitted statistics, inverses, degeneracy."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgefbg.errors import DegenerateScaleError
from edgefbg.transforms import (
    OutputTransformParams,
    apply_output,
    apply_whiten,
    apply_zscale1d,
    fit_output,
    fit_whiten,
    fit_zscale1d,
    invert_output,
    invert_whiten,
    invert_zscale1d,
)


def random_chains(rng, n, n_markers=21):
    base = rng.normal(size=(n, n_markers, 3)) * 5.0
    base += rng.normal(size=(1, n_markers, 3)) * 40.0
    return base


class TestZScale:
    def test_hand_example(self):
        params = fit_zscale1d(np.array([1.0, 3.0]))
        assert params.mu == 2.0
        assert params.sigma == 1.0  # population std
        assert apply_zscale1d(np.array(3.0), params) == 1.0

    def test_standardized_data_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=10000)
        x = (x - x.mean()) / x.std()
        params = fit_zscale1d(x)
        np.testing.assert_allclose(apply_zscale1d(x, params), x, atol=1e-12)

    def test_transformed_train_set_standard(self):
        rng = np.random.default_rng(1)
        x = rng.normal(3.0, 2.5, size=(100, 3, 125))
        params = fit_zscale1d(x)
        z = apply_zscale1d(x, params)
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1.0) < 1e-9

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        x = rng.normal(5.0, 0.3, size=(50, 10))
        params = fit_zscale1d(x)
        back = invert_zscale1d(apply_zscale1d(x, params), params)
        np.testing.assert_allclose(back, x, atol=1e-12)

    def test_constant_data_degenerate(self):
        with pytest.raises(DegenerateScaleError):
            fit_zscale1d(np.full(100, 3.25))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            fit_zscale1d(np.array([1.0, np.nan]))


class TestWhiten:
    def test_axis_aligned_toy(self):
        # centered data with covariance diag(4, 0.25): whitening divides
        # the axes by 2 and 0.5
        x = np.array([[2.0, 0.5], [-2.0, -0.5], [2.0, -0.5], [-2.0, 0.5]])
        params = fit_whiten(x)
        z = apply_whiten(x, params)
        np.testing.assert_allclose(z, x / np.array([2.0, 0.5]), atol=1e-12)

    def test_whitened_covariance_is_identity(self):
        rng = np.random.default_rng(3)
        mix = rng.normal(size=(12, 12))
        x = rng.normal(size=(500, 12)) @ mix + rng.normal(size=12)
        params = fit_whiten(x)
        z = apply_whiten(x, params)
        cov = z.T @ z / z.shape[0]  # population convention, matching the fit
        np.testing.assert_allclose(cov, np.eye(12), atol=1e-9)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-10)

    def test_eigvecs_orthogonal(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(100, 8))
        params = fit_whiten(x)
        np.testing.assert_allclose(params.eigvecs.T @ params.eigvecs, np.eye(8),
                                   atol=1e-8)

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(60, 3, 125))
        params = fit_whiten(x)
        back = invert_whiten(apply_whiten(x, params), params)
        np.testing.assert_allclose(back, x.reshape(60, -1), atol=1e-8)

    def test_rank_deficient_clamped_round_trip(self):
        # 10 samples in 20 dims: covariance rank <= 9, clamp must keep the
        # transform invertible
        rng = np.random.default_rng(6)
        x = rng.normal(size=(10, 20))
        params = fit_whiten(x)
        assert np.all(params.eigvals > 0)
        back = invert_whiten(apply_whiten(x, params), params)
        np.testing.assert_allclose(back, x, atol=1e-7)

    def test_fit_ignores_everything_but_train(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(50, 6))
        a = fit_whiten(x)
        b = fit_whiten(x.copy())
        assert a.mu.tobytes() == b.mu.tobytes()
        assert a.eigvecs.tobytes() == b.eigvecs.tobytes()
        assert a.eigvals.tobytes() == b.eigvals.tobytes()

    def test_nonfinite_rejected(self):
        x = np.zeros((5, 4))
        x[2, 1] = np.inf
        with pytest.raises(ValueError):
            fit_whiten(x)


class TestOutputTransforms:
    def test_m1_global_radius(self):
        rng = np.random.default_rng(8)
        y = random_chains(rng, 400)
        params = fit_output("m1", y)
        z = apply_output(y, params).reshape(400, 21, 3)
        # each cloud centered; mean over markers of mean radius is 1
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        radii = np.linalg.norm(z, axis=2).mean(axis=0)
        assert abs(radii.mean() - 1.0) < 1e-12

    def test_m1_identity_when_standard(self):
        rng = np.random.default_rng(9)
        y = rng.normal(size=(300, 21, 3))
        y -= y.mean(axis=0)
        p0 = fit_output("m1", y)
        y = y / p0.global_radius
        params = fit_output("m1", y)
        np.testing.assert_allclose(apply_output(y, params),
                                   y.reshape(300, -1), atol=1e-9)

    def test_m2_hand_example(self):
        # one marker cloud of two points at +-(3,0,0): radius 3
        y = np.zeros((2, 1, 3))
        y[0, 0, 0] = 3.0
        y[1, 0, 0] = -3.0
        params = fit_output("m2", y)
        np.testing.assert_allclose(params.radii, [3.0])
        z = apply_output(y, params)
        np.testing.assert_allclose(z, [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])

    def test_m2_per_marker_unit_radius(self):
        rng = np.random.default_rng(10)
        y = random_chains(rng, 300)
        params = fit_output("m2", y)
        z = apply_output(y, params).reshape(300, 21, 3)
        radii = np.linalg.norm(z, axis=2).mean(axis=0)
        np.testing.assert_allclose(radii, 1.0, atol=1e-12)

    def test_m3_whitens_each_cloud(self):
        rng = np.random.default_rng(11)
        y = random_chains(rng, 500)
        params = fit_output("m3", y)
        z = apply_output(y, params).reshape(500, 21, 3)
        for k in range(21):
            cloud = z[:, k, :]
            cov = cloud.T @ cloud / cloud.shape[0]
            np.testing.assert_allclose(cov, np.eye(3), atol=1e-6)

    def test_m4_is_deltas(self):
        rng = np.random.default_rng(12)
        y = random_chains(rng, 20)
        params = fit_output("m4", y)
        z = apply_output(y, params)
        assert z.shape == (20, 60)
        np.testing.assert_array_equal(z.reshape(20, 20, 3), np.diff(y, axis=1))

    @pytest.mark.parametrize("method", ["m1", "m2", "m3", "m4"])
    def test_round_trip(self, method):
        rng = np.random.default_rng(13)
        y = random_chains(rng, 200)
        params = fit_output(method, y)
        z = apply_output(y, params)
        assert z.shape == (200, params.output_dim)
        anchors = y[:, 0, :] if method == "m4" else None
        back = invert_output(z, params, anchors)
        np.testing.assert_allclose(back, y, rtol=1e-9, atol=1e-9)

    def test_round_trip_on_unseen_data(self):
        rng = np.random.default_rng(14)
        train = random_chains(rng, 150)
        test = random_chains(rng, 50)
        for method in ("m1", "m2", "m3"):
            params = fit_output(method, train)
            back = invert_output(apply_output(test, params), params)
            np.testing.assert_allclose(back, test, rtol=1e-9, atol=1e-9)

    def test_m4_requires_anchor(self):
        rng = np.random.default_rng(15)
        y = random_chains(rng, 5)
        params = fit_output("m4", y)
        z = apply_output(y, params)
        with pytest.raises(ValueError):
            invert_output(z, params)

    def test_output_dims(self):
        rng = np.random.default_rng(16)
        y = random_chains(rng, 30)
        assert fit_output("m1", y).output_dim == 63
        assert fit_output("m4", y).output_dim == 60

    def test_m2_zero_radius_degenerate(self):
        y = np.zeros((10, 2, 3))
        y[:, 1, :] = np.random.default_rng(0).normal(size=(10, 3))
        with pytest.raises(DegenerateScaleError):
            fit_output("m2", y)

    def test_m3_singular_cloud_warns(self):
        rng = np.random.default_rng(17)
        y = np.zeros((50, 1, 3))
        y[:, 0, 0] = rng.normal(size=50)  # variance only along x
        with pytest.warns(UserWarning, match="clamped"):
            fit_output("m3", y)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            fit_output("m5", np.zeros((3, 2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1),
           st.sampled_from(["m1", "m2", "m3", "m4"]))
    def test_round_trip_property(self, seed, method):
        rng = np.random.default_rng(seed)
        y = random_chains(rng, 40, n_markers=5)
        params = fit_output(method, y)
        anchors = y[:, 0, :] if method == "m4" else None
        back = invert_output(apply_output(y, params), params, anchors)
        np.testing.assert_allclose(back, y, rtol=1e-9, atol=1e-8)
