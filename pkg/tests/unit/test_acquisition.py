"""Tests for NEHVI batch acquisition"""

import numpy as np
import pytest

from prunestack.acquisition import (
    AcquisitionError,
    expected_improvement,
    nehvi_acquire,
    nehvi_scores,
    psd_root,
)
from prunestack.pareto import hypervolume_2d
from prunestack.search_space import featurize
from prunestack.trial import Trial
from tests.fixtures import point

REF = (0.6, 4.0)


class TablePosterior:
    """Posterior with fixed means per point and a fixed covariance scale."""

    def __init__(self, values, sd=0.0, correlation=0.0):
        self.table = {tuple(featurize(p)): v for p, v in values.items()}
        self.sd = sd
        self.correlation = correlation

    def posterior(self, X):
        mean = np.array([self.table[tuple(row)] for row in X])
        n = len(mean)
        corr = np.full((n, n), self.correlation) + (1.0 - self.correlation) * np.eye(n)
        return mean, self.sd**2 * corr


class TestZeroVarianceNehvi:
    """Test cases where the posterior is exact, so NEHVI is plain HV improvement."""

    def setup_method(self):
        """Set up two observed trials and two candidates."""
        self.a = point(10, 2048, 1024)
        self.b = point(12, 4096, 1536)
        self.c = point(14, 6144, 1792)
        self.d = point(16, 8192, 2048)
        self.observed = [
            Trial(self.a, 2, 2.0, quality=0.50),
            Trial(self.b, 2, 3.0, quality=0.45),
        ]
        self.quality = TablePosterior({self.a: 0.50, self.b: 0.45, self.c: 0.40, self.d: 0.30})
        self.latency = TablePosterior({self.a: 2.0, self.c: 2.5, self.d: 3.5})
        self.front = np.array([[0.50, 2.0], [0.45, 3.0]])

    def test_observed_point_scores_zero(self):
        """Test that re-proposing an evaluated point has no value."""
        scores = nehvi_scores(self.quality, self.latency, self.observed, REF, [self.a])
        assert scores[0] == 0.0

    def test_equals_exact_improvement(self):
        """Test that NEHVI equals the exact hypervolume gain."""
        scores = nehvi_scores(self.quality, self.latency, self.observed, REF, [self.c, self.d])
        base = hypervolume_2d(self.front, REF)
        for score, objectives in zip(scores, [(0.40, 2.5), (0.30, 3.5)]):
            exact = hypervolume_2d(np.vstack([self.front, objectives]), REF) - base
            assert abs(score - exact) < 1e-9

    def test_greedy_batch_conditions_on_picks(self):
        """Test that the second pick is scored against the first."""
        picks = nehvi_acquire(
            self.quality, self.latency, self.observed, REF, [self.a, self.c, self.d], q=2
        )
        assert picks[0] == self.c
        assert self.a not in picks

    def test_batch_capped_at_candidates(self):
        """Test that q larger than the candidate set returns every candidate once."""
        picks = nehvi_acquire(self.quality, self.latency, self.observed, REF, [self.c], q=4)
        assert picks == [self.c]

    def test_empty_candidates(self):
        """Test that an empty candidate set is an error."""
        with pytest.raises(AcquisitionError):
            nehvi_scores(self.quality, self.latency, self.observed, REF, [])


class TestMonteCarloNehvi:
    """Test cases for sampled NEHVI under an uncertain quality posterior."""

    def test_converges_to_reference(self):
        """Test that 2048 samples agree with 16384 within 2% on ten scenarios."""
        observed = [
            Trial(point(10, 2048, 1024), 2, 2.0, quality=0.50),
            Trial(point(12, 4096, 1536), 2, 3.0, quality=0.45),
        ]
        candidates = [point(14, 6144, 1792), point(16, 8192, 2048), point(11, 3072, 1280)]
        means = {t.point: t.quality for t in observed}
        means.update(zip(candidates, [0.42, 0.35, 0.47]))
        latency = TablePosterior(dict(zip(candidates, [2.5, 3.5, 1.5])))
        scenarios = [(sd, rho) for sd in (0.005, 0.01, 0.02, 0.03, 0.04) for rho in (0.0, 0.5)]
        for scenario, (sd, rho) in enumerate(scenarios):
            quality = TablePosterior(means, sd=sd, correlation=rho)
            approx = nehvi_scores(
                quality, latency, observed, REF, candidates, mc_samples=2048, seed=scenario
            )
            reference = nehvi_scores(
                quality, latency, observed, REF, candidates, mc_samples=16384, seed=100
            )
            np.testing.assert_allclose(approx, reference, rtol=0.02)


class TestHelpers:
    """Test cases for acquisition helpers."""

    def test_psd_root(self):
        """Test that the root reproduces a PSD matrix."""
        A = np.random.default_rng(0).standard_normal((4, 4))
        cov = A @ A.T
        root = psd_root(cov)
        np.testing.assert_allclose(root @ root.T, cov, atol=1e-10)

    def test_expected_improvement_without_variance(self):
        """Test that EI reduces to the plain improvement when certain."""
        ei = expected_improvement([1.0, 3.0], [0.0, 0.0], best=2.0)
        np.testing.assert_array_equal(ei, [1.0, 0.0])

    def test_expected_improvement_with_variance(self):
        """Test that uncertainty adds value even at the incumbent."""
        ei = expected_improvement([2.0], [1.0], best=2.0)
        np.testing.assert_allclose(ei, [1.0 / np.sqrt(2.0 * np.pi)])
