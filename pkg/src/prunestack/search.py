"""
Two-stage multi-objective search.

Stage 1 measures latency on the host for feasible Sobol points, optionally
followed by expected-improvement refinement, and fits a latency GP. Stage 2
is batched NEHVI over (quality, latency): quality is evaluated by an
oracle, latency is predicted by the stage-1 GP. Both stages are replayable
from a TrialStore: every decision is a deterministic function of the seed
and the trials recorded before it.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import islice
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .acquisition import AcquisitionError, expected_improvement, nehvi_acquire
from .gp import GPFitError, GPSurrogate, cross_val_r2, gp_fit
from .oracles import LatencyBench, QualityOracle, objective_latency
from .pareto import hypervolume_2d, pareto_indices
from .search_space import (
    DEFAULT_MAX_CONSECUTIVE,
    DEFAULT_SPACE,
    SearchPoint,
    SearchSpace,
    SearchSpaceError,
    feasible_sobol_points,
    featurize_all,
    perturb_point,
)
from .trial import Trial
from .trial_store import StoreConflictError, TrialStore


@dataclass
class SearchConfig:
    """Search budgets and acquisition settings."""

    reference_point: List[float] = field(default_factory=lambda: [0.6, 4.0])
    stage1_budget: int = 800
    stage2_budget: int = 200
    batch_size: int = 8
    mc_samples: int = 128
    seed: int = 0
    latency_threshold: Optional[float] = None  # max predicted TTFT for stage-2 candidates
    feasibility_max_consecutive: int = DEFAULT_MAX_CONSECUTIVE
    stage1_sobol_trials: Optional[int] = None  # None: the whole stage-1 budget is Sobol
    stage2_seed_trials: int = 8
    sobol_candidates: int = 256
    perturbation_candidates: int = 64
    objective_context: int = 2048
    cv_folds: int = 5
    gp_restarts: int = 2
    latency_variance: bool = False
    oracle_workers: int = 1

    @property
    def ref(self) -> Tuple[float, float]:
        return (float(self.reference_point[0]), float(self.reference_point[1]))

    def validate(self) -> Tuple[bool, List[str]]:
        issues = []
        if len(self.reference_point) != 2:
            issues.append("reference_point must have 2 entries (loss, ttft_seconds)")
        if self.seed < 0:
            issues.append("seed must be >= 0")
        if self.stage1_budget < 2:
            issues.append("stage1_budget must be >= 2 (the latency GP needs two points)")
        if self.stage2_budget < 0:
            issues.append("stage2_budget must be >= 0")
        if self.batch_size < 1:
            issues.append("batch_size must be >= 1")
        if self.mc_samples < 1:
            issues.append("mc_samples must be >= 1")
        if self.latency_threshold is not None and self.latency_threshold <= 0:
            issues.append("latency_threshold must be positive")
        if self.feasibility_max_consecutive < 0:
            issues.append("feasibility_max_consecutive must be >= 0")
        if self.stage1_sobol_trials is not None and self.stage1_sobol_trials < 2:
            issues.append("stage1_sobol_trials must be >= 2 (the GP needs two points)")
        if self.stage2_seed_trials < 2:
            issues.append("stage2_seed_trials must be >= 2")
        if self.sobol_candidates < 1:
            issues.append("sobol_candidates must be >= 1")
        if self.perturbation_candidates < 0:
            issues.append("perturbation_candidates must be >= 0")
        if self.cv_folds < 2:
            issues.append("cv_folds must be >= 2")
        if self.gp_restarts < 0:
            issues.append("gp_restarts must be >= 0")
        if self.oracle_workers < 1:
            issues.append("oracle_workers must be >= 1")
        return len(issues) == 0, issues


@dataclass
class Stage1Result:
    latency_gp: GPSurrogate
    trials: List[Trial]
    r2: float  # cross-validated R^2 of the latency GP, nan when undefined


@dataclass
class Stage2Result:
    front: List[Trial]  # non-dominated trials inside the reference box, by latency
    trials: List[Trial]

    def hypervolume(self, ref: Sequence[float]) -> float:
        """Hypervolume of the trials as stored; NEHVI trials count with predicted latency."""
        return front_hypervolume(self.trials, ref)


def _sub_seed(config: SearchConfig, *parts: int) -> int:
    """Stable integer seed derived from the run seed and a position in the run."""
    return int(np.random.SeedSequence([config.seed, *parts]).generate_state(1)[0])


def _candidate_pool(
    evaluated: Iterable[SearchPoint],
    incumbents: Sequence[SearchPoint],
    space: SearchSpace,
    config: SearchConfig,
    rng: np.random.Generator,
    sobol_seed: int,
) -> List[SearchPoint]:
    """Fresh Sobol points plus perturbations of ``incumbents``, minus evaluated points."""
    seen = {p.encode() for p in evaluated}
    pool: List[SearchPoint] = []

    def offer(point: SearchPoint) -> None:
        key = point.encode()
        if key not in seen:
            seen.add(key)
            pool.append(point)

    stream = feasible_sobol_points(space, sobol_seed, config.feasibility_max_consecutive)
    for point in islice(stream, config.sobol_candidates):
        offer(point)
    if incumbents:
        for _ in range(config.perturbation_candidates):
            base = incumbents[int(rng.integers(len(incumbents)))]
            offer(perturb_point(base, rng, space, config.feasibility_max_consecutive))
    return pool


def _measure(
    bench: LatencyBench, point: SearchPoint, config: SearchConfig, provenance: str
) -> Trial:
    samples = bench.measure(point)
    return Trial(
        point=point,
        stage=1,
        latency=objective_latency(samples, config.objective_context),
        samples=tuple(samples),
        provenance=provenance,
    )


def _refine_point(
    trials: Sequence[Trial], space: SearchSpace, config: SearchConfig
) -> SearchPoint:
    """Next stage-1 point by expected improvement on latency."""
    k = len(trials)
    X = featurize_all([t.point for t in trials], space)
    y = np.array([t.latency for t in trials])
    gp = gp_fit(X, y, n_restarts=config.gp_restarts, seed=_sub_seed(config, 1, k))
    rng = np.random.default_rng([config.seed, 1, k])
    incumbents = [trials[i].point for i in np.argsort(y, kind="stable")[:8]]
    pool = _candidate_pool(
        [t.point for t in trials], incumbents, space, config, rng, _sub_seed(config, 11, k)
    )
    if not pool:
        raise AcquisitionError("no unevaluated candidates left for stage-1 refinement")
    mean, var = gp.predict(featurize_all(pool, space))
    scores = expected_improvement(mean, var, float(y.min()))
    return pool[int(np.argmax(scores))]


def run_stage1(
    space: SearchSpace,
    config: SearchConfig,
    bench: LatencyBench,
    store: Optional[TrialStore] = None,
) -> Stage1Result:
    """
    Measure latency for the stage-1 budget and fit the latency surrogate.

    Args:
        space: search space
        config: search settings; ``seed`` fixes the Sobol sequence
        bench: latency bench returning one sample per context
        store: open store to persist and resume from

    Returns:
        Stage1Result with the fitted GP, all stage-1 trials and the CV R^2
    """
    ok, issues = config.validate()
    if not ok:
        raise SearchSpaceError("; ".join(issues))
    trials = store.trials(stage=1) if store else []
    budget = config.stage1_budget
    sobol_n = budget
    if config.stage1_sobol_trials is not None:
        sobol_n = min(config.stage1_sobol_trials, budget)

    stream = feasible_sobol_points(space, config.seed, config.feasibility_max_consecutive)
    resumed = min(len(trials), sobol_n)
    for expected, recorded in zip(islice(stream, resumed), trials):
        if expected != recorded.point:
            raise StoreConflictError(
                f"stored stage-1 trial {recorded.point} does not match "
                f"the Sobol stream ({expected})"
            )

    while len(trials) < budget:
        k = len(trials)
        if k < sobol_n:
            point, provenance = next(stream), "sobol"
        else:
            point, provenance = _refine_point(trials, space, config), "ei"
        trial = _measure(bench, point, config, provenance)
        logging.info(f"Stage 1 [{k + 1}/{budget}] {point}: TTFT {trial.latency:.4f} s")
        trials.append(trial)
        if store:
            store.append_trial(trial)

    X = featurize_all([t.point for t in trials], space)
    y = np.array([t.latency for t in trials])
    gp = gp_fit(X, y, n_restarts=config.gp_restarts, seed=config.seed)
    folds = min(config.cv_folds, len(trials) // 2)
    try:
        r2 = cross_val_r2(X, y, folds=folds, seed=config.seed)
    except (ValueError, GPFitError) as e:
        logging.warning(f"Latency GP cross-validation undefined: {e}")
        r2 = float("nan")
    logging.info(f"Latency GP: {len(trials)} trials, CV R^2 = {r2:.3f}")
    return Stage1Result(gp, trials, r2)


def _evaluate(
    oracle: QualityOracle, points: Sequence[SearchPoint], workers: int
) -> Iterable[float]:
    if workers <= 1 or len(points) <= 1:
        return (oracle(p) for p in points)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(oracle, points))


def _propose_batch(
    history: Sequence[Trial],
    latency_gp: GPSurrogate,
    config: SearchConfig,
    space: SearchSpace,
    batch_index: int,
) -> List[SearchPoint]:
    """Batch ``batch_index``; depends only on ``history`` and the seed."""
    X = featurize_all([t.point for t in history], space)
    y = np.array([t.quality for t in history], dtype=np.float64)
    quality_gp = gp_fit(X, y, n_restarts=config.gp_restarts, seed=_sub_seed(config, 2, batch_index))
    rng = np.random.default_rng([config.seed, 2, batch_index])
    objectives = np.array([t.objectives for t in history])
    incumbents = [history[i].point for i in pareto_indices(objectives)]
    pool = _candidate_pool(
        [t.point for t in history],
        incumbents,
        space,
        config,
        rng,
        _sub_seed(config, 22, batch_index),
    )
    if config.latency_threshold is not None and pool:
        mean, _ = latency_gp.predict(featurize_all(pool, space))
        pool = [p for p, m in zip(pool, mean) if m <= config.latency_threshold]
    if not pool:
        return []
    return nehvi_acquire(
        quality_gp,
        latency_gp,
        history,
        config.ref,
        pool,
        q=config.batch_size,
        mc_samples=config.mc_samples,
        seed=_sub_seed(config, 23, batch_index),
        latency_variance=config.latency_variance,
        space=space,
    )


def run_stage2(
    latency_gp: GPSurrogate,
    quality_oracle: QualityOracle,
    config: SearchConfig,
    stage1_trials: Sequence[Trial],
    space: SearchSpace = DEFAULT_SPACE,
    store: Optional[TrialStore] = None,
) -> Stage2Result:
    """
    Batched NEHVI search over (quality, latency).

    The first ``stage2_seed_trials`` stage-1 points are evaluated for quality
    with their measured latency; every later trial is chosen by NEHVI and
    carries the latency GP's predicted mean.

    Args:
        latency_gp: stage-1 latency surrogate
        quality_oracle: maps a point to its loss
        config: search settings
        stage1_trials: measured stage-1 trials, in order
        space: search space
        store: open store to persist and resume from

    Returns:
        Stage2Result with the final front and every stage-2 trial
    """
    ok, issues = config.validate()
    if not ok:
        raise SearchSpaceError("; ".join(issues))
    n_seeds = min(config.stage2_seed_trials, len(stage1_trials))
    if n_seeds < 2:
        raise SearchSpaceError("stage 2 needs at least 2 measured stage-1 trials")
    trials = store.trials(stage=2) if store else []
    for stored, seed_trial in zip(trials[:n_seeds], stage1_trials):
        if stored.point != seed_trial.point:
            raise StoreConflictError(
                f"stored stage-2 seed {stored.point} does not match "
                f"stage-1 trial {seed_trial.point}"
            )

    def record(trial: Trial) -> None:
        trials.append(trial)
        if store:
            store.append_trial(trial)

    pending_seeds = list(stage1_trials[len(trials) : n_seeds])
    for seed_trial, quality in zip(
        pending_seeds,
        _evaluate(quality_oracle, [t.point for t in pending_seeds], config.oracle_workers),
    ):
        record(
            Trial(
                point=seed_trial.point,
                stage=2,
                latency=seed_trial.latency,
                quality=float(quality),
                samples=seed_trial.samples,
                provenance="seed",
            )
        )

    q = config.batch_size
    budget = config.stage2_budget
    done = len(trials) - n_seeds
    while done < budget:
        batch_index = done // q
        history = trials[: n_seeds + batch_index * q]
        batch = _propose_batch(history, latency_gp, config, space, batch_index)
        pending = batch[done - batch_index * q : min(q, budget - batch_index * q)]
        if not pending:
            logging.warning(f"Stage 2 stopped after {done} trials: no eligible candidates left")
            break
        predicted, _ = latency_gp.predict(featurize_all(pending, space))
        qualities = _evaluate(quality_oracle, pending, config.oracle_workers)
        for point, latency, quality in zip(pending, predicted, qualities):
            record(
                Trial(
                    point=point,
                    stage=2,
                    latency=float(latency),
                    latency_predicted=True,
                    quality=float(quality),
                    provenance=f"nehvi-{batch_index}",
                )
            )
            done += 1
            logging.info(
                f"Stage 2 [{done}/{budget}] {point}: loss {quality:.4f}, "
                f"TTFT~{latency:.4f} s"
            )

    front = final_front(trials, config.ref)
    hv = front_hypervolume(trials, config.ref)
    logging.info(f"Stage 2 front: {len(front)} points, HV {hv:.4f}")
    return Stage2Result(front, trials)


def final_front(trials: Sequence[Trial], ref: Sequence[float]) -> List[Trial]:
    """Non-dominated trials strictly inside the reference box, by increasing latency."""
    inside = [
        t for t in trials if t.quality is not None and t.quality < ref[0] and t.latency < ref[1]
    ]
    if not inside:
        return []
    idx = pareto_indices(np.array([t.objectives for t in inside]))
    return [inside[i] for i in idx]


def front_hypervolume(trials: Sequence[Trial], ref: Sequence[float]) -> float:
    evaluated = [t.objectives for t in trials if t.quality is not None]
    if not evaluated:
        return 0.0
    return hypervolume_2d(np.array(evaluated), ref)


def remeasure(trials: Sequence[Trial], bench: LatencyBench, config: SearchConfig) -> List[Trial]:
    """Copies of ``trials`` with every predicted latency replaced by a bench measurement."""
    out = []
    for trial in trials:
        if not trial.latency_predicted:
            out.append(trial)
            continue
        measured = _measure(bench, trial.point, config, trial.provenance)
        out.append(
            replace(
                trial, latency=measured.latency, latency_predicted=False, samples=measured.samples
            )
        )
    return out


def sobol_baseline(
    n: int,
    space: SearchSpace,
    config: SearchConfig,
    quality_oracle: QualityOracle,
    bench: LatencyBench,
) -> List[Trial]:
    """First ``n`` feasible Sobol points with measured latency and oracle quality."""
    stream = feasible_sobol_points(space, config.seed, config.feasibility_max_consecutive)
    points = list(islice(stream, n))
    trials = []
    for point, quality in zip(points, _evaluate(quality_oracle, points, config.oracle_workers)):
        measured = _measure(bench, point, config, "sobol-baseline")
        trials.append(
            Trial(
                point=point,
                stage=2,
                latency=measured.latency,
                quality=float(quality),
                samples=measured.samples,
                provenance="sobol-baseline",
            )
        )
    return trials
