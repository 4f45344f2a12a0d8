"""Tests for quality oracles and latency benches"""

import numpy as np
import pytest

from prunestack.latency_bench import BenchProtocol, LatencySample
from prunestack.oracles import (
    AnalyticLatencyStub,
    FlopsLatencyStub,
    HostLatencyBench,
    efficient_runs,
    mean_nll,
    nll_quality_oracle,
    objective_latency,
    synthetic_loss_curves,
    synthetic_quality_mean,
    synthetic_quality_oracle,
)
from tests.fixtures import point, tags, tiny_model, tiny_stats


class TestSyntheticQuality:
    """Test cases for the synthetic quality oracle."""

    def test_seeded_noise_is_reproducible(self):
        """Test that the same seed gives the same loss."""
        p = point(12, 4096, 1536, "F.S.F.K.F.F.S.F.F.K.F.F")
        assert synthetic_quality_oracle(p, seed=1) == synthetic_quality_oracle(p, seed=1)
        assert synthetic_quality_oracle(p, seed=1) != synthetic_quality_oracle(p, seed=2)

    def test_noise_is_small(self):
        """Test that the noise stays near the configured scale."""
        p = point(12, 4096, 1536)
        values = [synthetic_quality_oracle(p, seed=s) for s in range(200)]
        assert abs(np.mean(values) - synthetic_quality_mean(p)) < 0.002
        assert np.std(values) < 0.006

    def test_bigger_models_are_better(self):
        """Test that adding capacity lowers the loss."""
        small = synthetic_quality_mean(point(12, 2048, 1024))
        large = synthetic_quality_mean(point(12, 8192, 2048))
        assert large < small

    def test_efficient_layers_cost_quality(self):
        """Test that skip layers raise the loss."""
        full = synthetic_quality_mean(point(12, 4096, 1536))
        skip = synthetic_quality_mean(point(12, 4096, 1536, "F.K.F.F.K.F.F.K.F.F.F.F"))
        assert skip > full

    def test_long_runs_are_penalised(self):
        """Test the extra penalty for runs of three or more efficient layers."""
        assert efficient_runs(tags("S.K.S.F.K.F")) == [3, 1]
        runs = synthetic_quality_mean(point(6, 4096, 1536, "S.K.S.F.F.F"))
        split = synthetic_quality_mean(point(6, 4096, 1536, "S.K.F.S.F.F"))
        assert runs - split == pytest.approx(0.02)


class TestNllOracle:
    """Test cases for held-out negative log-likelihood."""

    def test_uniform_logits_give_log_vocab(self):
        """Test that a model with zero embeddings scores ln(V)."""
        model = tiny_model("F.K")
        zeros = np.zeros_like(model.weights["tok_embeddings"])
        blank = model.replace_weights({"tok_embeddings": zeros})
        assert mean_nll(blank, np.arange(20) % 64) == pytest.approx(np.log(64), abs=1e-6)

    def test_needs_two_tokens(self):
        """Test that a single token has no next-token target."""
        with pytest.raises(ValueError):
            mean_nll(tiny_model(), [1])

    def test_identity_prune_matches_base(self):
        """Test that pruning to the base architecture keeps the held-out loss."""
        base = tiny_model("F.F.F.F", window=16)
        stats = tiny_stats(base)
        heldout = np.random.default_rng(0).integers(0, 64, size=(2, 12))
        loss = nll_quality_oracle(base, stats, point(4, 64, 32), heldout, swa_window=16)
        assert loss == pytest.approx(mean_nll(base, heldout), abs=1e-9)


class TestStubBenches:
    """Test cases for the deterministic latency stubs."""

    def test_analytic_stub_shape(self):
        """Test one sample per context, with TTFT growing with context."""
        samples = AnalyticLatencyStub().measure(point(12, 4096, 1536))
        assert [s.context for s in samples] == [1024, 2048, 4096]
        ttfts = [s.ttft_seconds for s in samples]
        assert ttfts == sorted(ttfts)

    def test_analytic_stub_prefers_skip_over_swa(self):
        """Test that skip attention saves more TTFT than SWA under the ring buffer."""
        stub = AnalyticLatencyStub()
        full = stub.ttft(point(12, 4096, 1536), 2048)
        swa = stub.ttft(point(12, 4096, 1536, "F.S.F.S.F.S.F.S.F.S.F.S"), 2048)
        skip = stub.ttft(point(12, 4096, 1536, "F.K.F.K.F.K.F.K.F.K.F.K"), 2048)
        assert skip < full
        assert swa >= 0.95 * full

    def test_flops_stub_is_proportional(self):
        """Test that TTFT is exactly prefill FLOPs over throughput."""
        small = FlopsLatencyStub().measure(point(10, 2048, 1024))[0]
        large = FlopsLatencyStub().measure(point(16, 8192, 2048))[0]
        assert small.ttft_seconds < large.ttft_seconds
        assert small.run_spread == 0.0

    def test_objective_latency_picks_closest_context(self):
        """Test objective context selection."""
        samples = AnalyticLatencyStub(contexts=[1024, 4096]).measure(point(10, 2048, 1024))
        assert objective_latency(samples, 2048) == samples[0].ttft_seconds
        assert objective_latency(samples, 4000) == samples[1].ttft_seconds
        with pytest.raises(ValueError):
            objective_latency([], 2048)


class TestHostLatencyBench:
    """Test cases for timing pruned models on the host."""

    def test_measures_every_context(self):
        """Test that the host bench prunes and times a point."""
        base = tiny_model("F.F.F.F", window=16)
        protocol = BenchProtocol(
            context_lengths=[32, 64], chunk_size=16, threads=1, measured_runs=1
        )
        bench = HostLatencyBench(base, tiny_stats(base), protocol, width_divisor=8, swa_window=16)
        target = point(3, 256, 128, "F.S.K")
        samples = bench.measure(target)
        assert [s.context for s in samples] == [32, 64]
        assert all(isinstance(s, LatencySample) and s.point == target for s in samples)
        assert bench.model_for(target).config.d_ffn == 32


class TestLossCurves:
    """Test cases for synthetic training curves."""

    def test_curves_decay_towards_quality(self):
        """Test that curves approach the synthetic loss."""
        p = point(12, 4096, 1536)
        curve = synthetic_loss_curves([p], [250, 1000, 100000], seed=0)[p.encode()]
        assert curve[250] > curve[100000]
        assert abs(curve[100000] - synthetic_quality_mean(p)) < 0.1
