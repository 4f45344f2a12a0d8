"""Tests for the two-stage search driver"""

import math
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from prunestack.oracles import AnalyticLatencyStub, objective_latency, synthetic_quality_oracle
from prunestack.pareto import pareto_mask
from prunestack.search import (
    SearchConfig,
    final_front,
    front_hypervolume,
    remeasure,
    run_stage1,
    run_stage2,
    sobol_baseline,
)
from prunestack.search_space import DEFAULT_SPACE, SearchSpaceError, is_feasible
from prunestack.trial import Trial
from prunestack.trial_store import StoreConflictError, TrialStore
from tests.fixtures import point


class CountingBench:
    """Latency bench wrapper that records every measured point."""

    def __init__(self, inner=None):
        self.inner = inner or AnalyticLatencyStub()
        self.calls = []

    def measure(self, p):
        self.calls.append(p)
        return self.inner.measure(p)


def small_config(**overrides):
    values = dict(
        stage1_budget=12,
        stage2_budget=8,
        batch_size=4,
        mc_samples=16,
        sobol_candidates=32,
        perturbation_candidates=8,
        gp_restarts=0,
        stage2_seed_trials=6,
        seed=0,
    )
    values.update(overrides)
    return SearchConfig(**values)


def quality(p):
    return synthetic_quality_oracle(p, seed=0)


class TestSearchConfig:
    """Test cases for search settings."""

    def test_defaults_are_valid(self):
        """Test the default settings."""
        ok, issues = SearchConfig().validate()
        assert ok, issues

    def test_invalid_settings(self):
        """Test that invalid settings are listed."""
        ok, issues = SearchConfig(stage1_budget=1, batch_size=0, reference_point=[1.0]).validate()
        assert not ok
        assert len(issues) == 3

    def test_run_refuses_invalid_config(self):
        """Test that stage 1 refuses invalid settings."""
        with pytest.raises(SearchSpaceError, match="stage1_budget"):
            run_stage1(DEFAULT_SPACE, small_config(stage1_budget=1), CountingBench())


class TestStage1:
    """Test cases for latency measurement and the latency surrogate."""

    def test_sobol_stage(self):
        """Test a pure-Sobol stage 1."""
        bench = CountingBench()
        result = run_stage1(DEFAULT_SPACE, small_config(), bench)
        assert len(result.trials) == 12
        assert len(bench.calls) == 12
        assert all(t.provenance == "sobol" and t.stage == 1 for t in result.trials)
        assert all(is_feasible(t.point) for t in result.trials)
        assert len({t.point.encode() for t in result.trials}) == 12
        assert result.latency_gp.n_train == 12
        assert math.isfinite(result.r2)

    def test_latency_is_objective_context(self):
        """Test that a trial's latency is the TTFT at the objective context."""
        result = run_stage1(DEFAULT_SPACE, small_config(stage1_budget=3), CountingBench())
        for trial in result.trials:
            by_context = {s.context: s.ttft_seconds for s in trial.samples}
            assert trial.latency == by_context[2048]

    def test_expected_improvement_refinement(self):
        """Test that points after the Sobol prefix come from EI and are new."""
        result = run_stage1(DEFAULT_SPACE, small_config(stage1_sobol_trials=8), CountingBench())
        provenance = [t.provenance for t in result.trials]
        assert provenance == ["sobol"] * 8 + ["ei"] * 4
        assert len({t.point.encode() for t in result.trials}) == 12
        assert all(is_feasible(t.point) for t in result.trials)

    def test_same_seed_same_points(self):
        """Test that stage 1 is deterministic per seed."""
        a = run_stage1(DEFAULT_SPACE, small_config(stage1_budget=6), CountingBench())
        b = run_stage1(DEFAULT_SPACE, small_config(stage1_budget=6), CountingBench())
        c = run_stage1(DEFAULT_SPACE, small_config(stage1_budget=6, seed=1), CountingBench())
        assert [t.point for t in a.trials] == [t.point for t in b.trials]
        assert [t.point for t in a.trials] != [t.point for t in c.trials]

    def test_two_trials_give_undefined_r2(self):
        """Test that cross-validation is reported as undefined for tiny budgets."""
        result = run_stage1(DEFAULT_SPACE, small_config(stage1_budget=2), CountingBench())
        assert math.isnan(result.r2)


class TestStage1Resume:
    """Test cases for resuming stage 1 from a store."""

    def setup_method(self):
        """Set up test fixtures."""
        self.temp_dir = Path(tempfile.mkdtemp())

    def teardown_method(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir)

    def test_extending_the_budget_reuses_trials(self):
        """Test that a larger budget only measures the missing points."""
        with TrialStore(self.temp_dir, "h") as store:
            first = run_stage1(DEFAULT_SPACE, small_config(stage1_budget=6), CountingBench(), store)
        bench = CountingBench()
        with TrialStore(self.temp_dir, "h") as store:
            second = run_stage1(DEFAULT_SPACE, small_config(stage1_budget=10), bench, store)
        assert len(bench.calls) == 4
        assert [t.point for t in second.trials[:6]] == [t.point for t in first.trials]

    def test_foreign_trials_are_rejected(self):
        """Test that stored points must match this run's Sobol stream."""
        with TrialStore(self.temp_dir, "h") as store:
            store.append_trial(Trial(point(10, 2048, 1024), 1, 1.0))
            with pytest.raises(StoreConflictError, match="does not match"):
                run_stage1(DEFAULT_SPACE, small_config(), CountingBench(), store)


class TestStage2Resume:
    """Test cases for resuming stage 2 from a store."""

    def setup_method(self):
        """Set up test fixtures."""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config = small_config()
        self.stage1 = run_stage1(DEFAULT_SPACE, self.config, CountingBench())

    def teardown_method(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir)

    def test_foreign_seed_trials_are_rejected(self):
        """Test that stored seed evaluations must be the leading stage-1 points."""
        with TrialStore(self.temp_dir, "h") as store:
            store.append_trial(Trial(point(10, 2048, 1024), 2, 1.0, quality=0.5))
            with pytest.raises(StoreConflictError, match="does not match"):
                run_stage2(
                    self.stage1.latency_gp,
                    quality,
                    self.config,
                    self.stage1.trials,
                    store=store,
                )


class TestStage2:
    """Test cases for batched NEHVI search."""

    def setup_method(self):
        """Set up a stage-1 result to search from."""
        self.config = small_config()
        self.stage1 = run_stage1(DEFAULT_SPACE, self.config, CountingBench())

    def test_seed_and_nehvi_trials(self):
        """Test the seed evaluations followed by NEHVI batches."""
        result = run_stage2(self.stage1.latency_gp, quality, self.config, self.stage1.trials)
        trials = result.trials
        assert len(trials) == 14
        seeds, proposed = trials[:6], trials[6:]
        assert all(t.provenance == "seed" and not t.latency_predicted for t in seeds)
        assert [t.latency for t in seeds] == [t.latency for t in self.stage1.trials[:6]]
        assert [t.provenance for t in proposed] == ["nehvi-0"] * 4 + ["nehvi-1"] * 4
        assert all(t.latency_predicted for t in proposed)
        assert all(is_feasible(t.point) for t in proposed)
        assert len({t.point.encode() for t in trials}) == 14

    def test_front_is_non_dominated(self):
        """Test that the final front is non-dominated and inside the reference box."""
        result = run_stage2(self.stage1.latency_gp, quality, self.config, self.stage1.trials)
        objectives = np.array([t.objectives for t in result.front])
        assert np.all(pareto_mask(objectives))
        ref = self.config.ref
        assert all(q < ref[0] and lat < ref[1] for q, lat in objectives)
        assert result.hypervolume(ref) == front_hypervolume(result.trials, ref)
        assert result.hypervolume(ref) > 0

    def test_deterministic(self):
        """Test that stage 2 is reproducible."""
        a = run_stage2(self.stage1.latency_gp, quality, self.config, self.stage1.trials)
        b = run_stage2(self.stage1.latency_gp, quality, self.config, self.stage1.trials)
        assert [t.point for t in a.trials] == [t.point for t in b.trials]

    def test_parallel_oracle_matches_serial(self):
        """Test that oracle worker threads do not change the result."""
        serial = run_stage2(self.stage1.latency_gp, quality, self.config, self.stage1.trials)
        threaded_config = small_config(oracle_workers=3)
        threaded = run_stage2(
            self.stage1.latency_gp, quality, threaded_config, self.stage1.trials
        )
        assert [t.point for t in serial.trials] == [t.point for t in threaded.trials]
        assert [t.quality for t in serial.trials] == [t.quality for t in threaded.trials]

    def test_latency_threshold(self):
        """Test that proposals respect the predicted-latency threshold."""
        threshold = float(np.median([t.latency for t in self.stage1.trials]))
        config = small_config(latency_threshold=threshold)
        result = run_stage2(self.stage1.latency_gp, quality, config, self.stage1.trials)
        proposed = [t for t in result.trials if t.latency_predicted]
        assert all(t.latency <= threshold for t in proposed)

    def test_zero_budget_front_from_seeds(self):
        """Test that a zero stage-2 budget evaluates only the seed trials."""
        config = small_config(stage2_budget=0)
        result = run_stage2(self.stage1.latency_gp, quality, config, self.stage1.trials)
        assert len(result.trials) == 6

    def test_needs_two_stage1_trials(self):
        """Test that stage 2 needs measured trials to seed from."""
        with pytest.raises(SearchSpaceError):
            run_stage2(self.stage1.latency_gp, quality, self.config, self.stage1.trials[:1])


class TestHelpers:
    """Test cases for front extraction and the Sobol baseline."""

    def test_final_front_ignores_outside_reference(self):
        """Test that trials beyond the reference point are never on the front."""
        trials = [
            Trial(point(10, 2048, 1024), 2, 5.0, quality=0.1),
            Trial(point(11, 2048, 1024), 2, 1.0, quality=0.5),
            Trial(point(12, 2048, 1024), 2, 2.0, quality=0.55),
        ]
        front = final_front(trials, (0.6, 4.0))
        assert [t.point.d_l for t in front] == [11]

    def test_remeasure_replaces_predicted_latency(self):
        """Test that predicted latencies are swapped for bench measurements."""
        config = small_config()
        measured = Trial(point(10, 2048, 1024), 2, 0.7, quality=0.5, provenance="seed")
        predicted = Trial(
            point(12, 4096, 1536), 2, 9.9, latency_predicted=True, quality=0.4, provenance="nehvi-0"
        )
        bench = CountingBench()
        out = remeasure([measured, predicted], bench, config)
        assert out[0] is measured
        assert bench.calls == [predicted.point]
        samples = AnalyticLatencyStub().measure(predicted.point)
        assert not out[1].latency_predicted
        assert out[1].latency == pytest.approx(objective_latency(samples, config.objective_context))
        assert out[1].quality == 0.4 and out[1].provenance == "nehvi-0"
        assert len(out[1].samples) == len(samples)

    def test_sobol_baseline(self):
        """Test that the baseline measures latency and quality for n Sobol points."""
        trials = sobol_baseline(5, DEFAULT_SPACE, small_config(), quality, CountingBench())
        assert len(trials) == 5
        assert all(t.stage == 2 and not t.latency_predicted for t in trials)
        assert all(t.provenance == "sobol-baseline" for t in trials)
