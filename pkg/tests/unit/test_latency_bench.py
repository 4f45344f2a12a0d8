"""Tests for latency measurement and analytic cost proxies"""

import os
from unittest.mock import patch

import pytest

from prunestack.latency_bench import (
    THREADS_ENV_VAR,
    BenchmarkError,
    BenchProtocol,
    LatencySample,
    TimerResolutionError,
    count_flops,
    count_params,
    count_runtime_attention_flops,
    count_runtime_prefill_flops,
    host_fingerprint,
    measure_decode,
    measure_ttft,
)
from prunestack.model_core import init_model
from tests.fixtures import point, tiny_config, tiny_model


class TestCounts:
    """Test cases for parameter and FLOP counts."""

    def test_param_count_matches_bundle(self):
        """Test that analytic parameter counts equal the tensors actually built."""
        for pattern in ["F", "F.S.K.F", "K.K", "S.F.S"]:
            config = tiny_config(pattern)
            assert count_params(config) == init_model(config, 0).parameter_count()

    def test_skip_is_cheaper(self):
        """Test that skip layers remove attention FLOPs and parameters."""
        full, skip = tiny_config("F.F"), tiny_config("F.K")
        assert count_flops(skip, 128).prefill < count_flops(full, 128).prefill
        assert count_params(skip) < count_params(full)

    def test_swa_ideal_formula(self):
        """Test the ideal SWA prefill count against full attention."""
        full = tiny_config("F", max_context=4096)
        swa = tiny_config("S", window=1024, max_context=4096)
        hw = full.attn_width
        diff = count_flops(full, 2048).prefill - count_flops(swa, 2048).prefill
        assert diff == 2 * hw * (2048 * 2048 - (2 * 2048 * 1024 - 1024 * 1024))

    def test_swa_short_context_equals_full(self):
        """Test that SWA below its window counts like full attention."""
        full = tiny_config("F")
        swa = tiny_config("S", window=64)
        assert count_flops(full, 32).prefill == count_flops(swa, 32).prefill

    def test_decode_keys(self):
        """Test that decode attention is bounded by the window."""
        full = tiny_config("F", max_context=4096)
        swa = tiny_config("S", window=16, max_context=4096)
        linear_and_head = count_flops(tiny_config("K"), 1000).decode_per_token
        assert count_flops(full, 1000).decode_per_token - linear_and_head > 0
        swa_attn = count_flops(swa, 1000).decode_per_token
        assert swa_attn < count_flops(full, 1000).decode_per_token

    def test_ring_buffer_work_exceeds_full_at_long_context(self):
        """Test that chunked SWA executes more attention work than full attention."""
        full = tiny_config("F", max_context=4096)
        swa = tiny_config("S", window=1024, max_context=4096)
        assert count_runtime_attention_flops(swa, 2048, 1024) > count_runtime_attention_flops(
            full, 2048, 1024
        )
        assert count_flops(swa, 2048).prefill < count_flops(full, 2048).prefill

    def test_runtime_never_below_ideal(self):
        """Test that executed work is at least the ideal masked work."""
        for pattern in ["F", "S", "F.S.K"]:
            config = tiny_config(pattern, window=256, max_context=4096)
            for context in (256, 1000, 2048):
                runtime = count_runtime_prefill_flops(config, context, 256)
                assert runtime >= count_flops(config, context).prefill

    def test_skip_only_has_no_attention(self):
        """Test that an all-skip model does no attention work."""
        assert count_runtime_attention_flops(tiny_config("K.K"), 512, 128) == 0


class TestBenchProtocol:
    """Test cases for the measurement protocol."""

    def test_defaults_are_valid(self):
        """Test the default protocol."""
        ok, issues = BenchProtocol().validate()
        assert ok and issues == []

    def test_invalid_values(self):
        """Test that bad counts are reported."""
        ok, issues = BenchProtocol(measured_runs=0, chunk_size=4096).validate()
        assert not ok
        assert any("measured_runs" in issue for issue in issues)
        assert any("chunk_size" in issue for issue in issues)

    def test_thread_override(self):
        """Test that the environment variable overrides the configured thread count."""
        with patch.dict(os.environ, {THREADS_ENV_VAR: "2"}):
            assert BenchProtocol(threads=8).resolved_threads() == 2
        with patch.dict(os.environ, {THREADS_ENV_VAR: "lots"}):
            with pytest.raises(BenchmarkError):
                BenchProtocol().resolved_threads()

    def test_no_override(self):
        """Test the configured thread count without an override."""
        env = {k: v for k, v in os.environ.items() if k != THREADS_ENV_VAR}
        with patch.dict(os.environ, env, clear=True):
            assert BenchProtocol(threads=3).resolved_threads() == 3


class TestLatencySample:
    """Test cases for latency samples."""

    def test_ttft_must_be_positive(self):
        """Test that a zero TTFT is rejected."""
        with pytest.raises(BenchmarkError):
            LatencySample(None, 1024, 0.0, 10.0, 0.0, "host")

    def test_dict_form_encodes_point(self):
        """Test that the point is stored in its text form."""
        sample = LatencySample(point(10, 2048, 1024), 1024, 0.5, 10.0, 0.01, "host")
        data = sample.to_dict()
        assert data["point"] == point(10, 2048, 1024).encode()
        assert LatencySample.from_dict(data) == sample

    def test_fingerprint_is_stable(self):
        """Test that the host fingerprint does not change within a process."""
        assert host_fingerprint() == host_fingerprint()


class TestMeasurement:
    """Test cases for host measurements on a tiny model."""

    def setup_method(self):
        """Set up a tiny model and a fast protocol."""
        self.model = tiny_model("F.S.K.F", window=16)
        self.proto = BenchProtocol(
            context_lengths=[64],
            chunk_size=16,
            threads=1,
            warmup_runs=1,
            measured_runs=2,
            decode_tokens=4,
        )

    def test_measure_ttft(self):
        """Test a TTFT measurement."""
        sample = measure_ttft(self.model, self.proto, 64, point=point(10, 2048, 1024))
        assert sample.context == 64
        assert sample.ttft_seconds > 0
        assert sample.decode_tok_per_s > 0
        assert sample.point == point(10, 2048, 1024)
        assert sample.host_fingerprint == host_fingerprint()

    def test_measure_decode(self):
        """Test a decode-rate measurement."""
        sample = measure_decode(self.model, self.proto, 64)
        assert sample.decode_tok_per_s > 0
        assert sample.ttft_seconds > 0

    def test_context_must_be_in_protocol(self):
        """Test that only configured context lengths are measured."""
        with pytest.raises(BenchmarkError, match="not in"):
            measure_ttft(self.model, self.proto, 32)

    def test_context_beyond_max(self):
        """Test that prompts plus decode tokens must fit max_context."""
        proto = BenchProtocol(context_lengths=[256], chunk_size=16, decode_tokens=4)
        with pytest.raises(BenchmarkError, match="max_context"):
            measure_ttft(self.model, proto, 256)

    def test_chunk_larger_than_window(self):
        """Test that the chunk must fit every SWA window."""
        proto = BenchProtocol(context_lengths=[64], chunk_size=32)
        with pytest.raises(BenchmarkError, match="window"):
            measure_ttft(self.model, proto, 64)

    def test_timer_resolution(self):
        """Test that intervals below the clock resolution are refused."""
        with patch("prunestack.latency_bench.time.perf_counter", return_value=1.0):
            with pytest.raises(TimerResolutionError):
                measure_ttft(self.model, self.proto, 64)
