"""Tests for the Gaussian-process surrogate"""

import numpy as np
import pytest

from prunestack.gp import (
    GPFitError,
    GPSurrogate,
    cross_val_r2,
    gp_fit,
    gp_predict,
    loo_r2,
    r2_score,
)


def smooth(X):
    return np.sin(3.0 * X[:, 0]) + 0.5 * X[:, 1] ** 2


class TestGPFit:
    """Test cases for fitting and prediction."""

    def setup_method(self):
        """Set up a smooth two-dimensional regression problem."""
        rng = np.random.default_rng(0)
        self.X = rng.random((40, 2))
        self.y = smooth(self.X)

    def test_interpolates_smooth_function(self):
        """Test that held-out predictions are close on a smooth target."""
        gp = gp_fit(self.X, self.y, n_restarts=2, seed=0)
        X_test = np.random.default_rng(1).random((20, 2)) * 0.8 + 0.1
        mean, var = gp.predict(X_test)
        assert np.max(np.abs(mean - smooth(X_test))) < 0.05
        assert np.all(var >= 0.0)

    def test_training_points_have_low_variance(self):
        """Test that the posterior is confident at observed inputs."""
        gp = gp_fit(self.X, self.y, n_restarts=1)
        _, var_train = gp.predict(self.X[:5])
        _, var_far = gp.predict(np.full((1, 2), 5.0))
        assert np.all(var_train < var_far[0])

    def test_fit_is_deterministic(self):
        """Test that the same seed gives the same hyperparameters."""
        a = gp_fit(self.X, self.y, n_restarts=2, seed=4)
        b = gp_fit(self.X, self.y, n_restarts=2, seed=4)
        np.testing.assert_array_equal(a.lengthscales, b.lengthscales)

    def test_posterior_matches_predict(self):
        """Test that the joint posterior diagonal equals the marginal variance."""
        gp = gp_fit(self.X, self.y, n_restarts=1)
        X_test = self.X[:6] + 0.01
        mean, var = gp.predict(X_test)
        joint_mean, cov = gp.posterior(X_test)
        np.testing.assert_allclose(joint_mean, mean, rtol=1e-10)
        np.testing.assert_allclose(np.diag(cov), var, atol=1e-10)
        np.testing.assert_allclose(cov, cov.T)

    def test_interpolates_noiseless_training_points(self):
        """Test that a noiseless fit passes through its observations."""
        X = np.linspace(0.0, 1.0, 20).reshape(-1, 1)
        y = np.sin(3.0 * X[:, 0])
        gp = gp_fit(X, y, n_restarts=2, seed=0)
        mean, _ = gp.predict(X)
        assert np.max(np.abs(mean - y)) < 1e-3

    def test_training_variance_bounded_by_noise(self):
        """Test that latent variance at observed inputs is at most the noise plus jitter."""
        gp = gp_fit(self.X, self.y, n_restarts=1)
        _, var = gp.predict(self.X)
        assert np.all(var <= gp.noise_variance_raw * (1.0 + 1e-9) + 1e-15)

    def test_far_field_reverts_to_data_mean(self):
        """Test that far from the data the posterior falls back to the prior."""
        gp = gp_fit(self.X, self.y, n_restarts=1)
        mean, var = gp.predict(np.full((1, 2), 1.0e4))
        assert mean[0] == pytest.approx(float(np.mean(self.y)), abs=1e-9)
        assert var[0] == pytest.approx(gp.prior_variance, rel=1e-9)

    def test_gp_predict_single_point(self):
        """Test the scalar prediction helper."""
        gp = gp_fit(self.X, self.y, n_restarts=0)
        mean, var = gp_predict(gp, self.X[0])
        assert isinstance(mean, float) and isinstance(var, float)
        assert abs(mean - self.y[0]) < 0.05

    def test_needs_two_points(self):
        """Test that fitting needs at least two observations."""
        with pytest.raises(GPFitError, match="at least 2"):
            gp_fit(self.X[:1], self.y[:1])

    def test_rejects_non_finite(self):
        """Test that NaN observations are rejected."""
        y = self.y.copy()
        y[3] = np.nan
        with pytest.raises(GPFitError, match="finite"):
            gp_fit(self.X, y)

    def test_constant_targets(self):
        """Test that constant observations still give a usable model."""
        gp = gp_fit(self.X, np.full(40, 2.5), n_restarts=0)
        mean, _ = gp.predict(self.X[:3])
        np.testing.assert_allclose(mean, 2.5, atol=1e-6)


class TestFixedHyperparameters:
    """Test cases for conditioning with fixed hyperparameters."""

    def test_two_point_posterior_matches_closed_form(self):
        """Test the posterior at one query against the hand-inverted 2x2 system."""
        ls, sf2, sn2, x = 0.7, 1.3, 0.01, 0.4
        gp = GPSurrogate.from_hyperparameters(
            [[0.0], [1.0]], [1.0, -1.0], [ls], sf2, sn2, standardize=False
        )
        a = sf2 + sn2
        b = sf2 * np.exp(-0.5 / ls**2)
        k1 = sf2 * np.exp(-0.5 * x**2 / ls**2)
        k2 = sf2 * np.exp(-0.5 * (1.0 - x) ** 2 / ls**2)
        expected_mean = (k1 - k2) / (a - b)
        expected_var = sf2 - (a * (k1**2 + k2**2) - 2.0 * b * k1 * k2) / (a**2 - b**2)

        mean, var = gp_predict(gp, [x])
        assert gp.jitter == 0.0
        assert mean == pytest.approx(expected_mean, rel=1e-12)
        assert var == pytest.approx(expected_var, rel=1e-12)


class TestR2:
    """Test cases for R^2 helpers."""

    def setup_method(self):
        """Set up a smooth regression problem."""
        rng = np.random.default_rng(2)
        self.X = rng.random((30, 2))
        self.y = smooth(self.X)

    def test_r2_perfect_and_mean(self):
        """Test the two anchors of R^2."""
        y = np.array([1.0, 2.0, 3.0])
        assert r2_score(y, y) == 1.0
        assert r2_score(y, np.full(3, 2.0)) == 0.0

    def test_r2_constant_targets(self):
        """Test that R^2 is undefined for constant targets."""
        with pytest.raises(ValueError):
            r2_score([1.0, 1.0], [1.0, 2.0])

    def test_loo_matches_brute_force(self):
        """Test closed-form leave-one-out against refitting with fixed hyperparameters."""
        gp = gp_fit(self.X, self.y, n_restarts=1)
        ys = (self.y - gp.y_mean) / gp.y_scale
        predicted = np.empty(30)
        for i in range(30):
            keep = np.arange(30) != i
            Xs = (self.X - gp.x_mean) / gp.x_scale
            sub = GPSurrogate.from_hyperparameters(
                Xs[keep],
                ys[keep],
                gp.lengthscales,
                gp.signal_variance,
                gp.noise_variance + gp.jitter,
                standardize=False,
            )
            predicted[i] = sub.predict(Xs[i : i + 1])[0][0]
        np.testing.assert_allclose(loo_r2(gp), r2_score(ys, predicted), atol=1e-6)

    def test_loo_r2_on_linear_target(self):
        """Test that a linear target in one of three inputs is predicted almost exactly."""
        X = np.random.default_rng(5).random((50, 3))
        gp = gp_fit(X, 3.0 * X[:, 0], n_restarts=2, seed=0)
        assert loo_r2(gp) >= 0.99

    def test_cross_val_r2_high_on_smooth_data(self):
        """Test that K-fold R^2 is high for a smooth target."""
        assert cross_val_r2(self.X, self.y, folds=5, seed=0) > 0.9

    def test_cross_val_with_custom_fit(self):
        """Test that any model with predict can be cross-validated."""

        class MeanModel:
            def __init__(self, y):
                self.value = float(np.mean(y))

            def predict(self, X):
                return np.full(len(X), self.value), np.zeros(len(X))

        r2 = cross_val_r2(self.X, self.y, folds=3, fit=lambda X, y: MeanModel(y))
        assert r2 <= 0.0

    def test_cross_val_folds_bounds(self):
        """Test fold-count validation."""
        with pytest.raises(ValueError):
            cross_val_r2(self.X, self.y, folds=1)
        with pytest.raises(ValueError):
            cross_val_r2(self.X[:3], self.y[:3], folds=4)
