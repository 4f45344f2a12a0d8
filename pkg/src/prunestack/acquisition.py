"""
Acquisition functions.

nehvi_acquire is a Monte-Carlo noisy expected hypervolume improvement over
(quality, latency): the quality surrogate is sampled jointly at the observed
points and at the candidates with quasi-Monte-Carlo normal base samples, so
every sample carries its own noisy baseline front. Candidates are scored by
their mean exclusive hypervolume gain and a batch is built greedily, each
pick being appended to every sampled baseline before the next pick.

Latency comes from the latency surrogate's posterior mean unless
``latency_variance`` is set, in which case it is sampled too.
"""

import logging
import warnings
from typing import List, Protocol, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy.stats import norm, qmc

from .pareto import hypervolume_improvement
from .search_space import DEFAULT_SPACE, SearchPoint, SearchSpace, featurize_all

Array = npt.NDArray[np.float64]


class AcquisitionError(Exception):
    """Raised when an acquisition cannot be evaluated (e.g. no candidates)."""

    pass


class PosteriorModel(Protocol):
    def posterior(self, X: npt.ArrayLike) -> Tuple[Array, Array]: ...


class ObservedTrial(Protocol):
    @property
    def point(self) -> SearchPoint: ...

    @property
    def latency(self) -> float: ...


def psd_root(cov: Array) -> Array:
    """Matrix R with R @ R.T == cov, negative eigenvalues clipped to zero."""
    eigval, eigvec = np.linalg.eigh(0.5 * (cov + cov.T))
    return eigvec * np.sqrt(np.clip(eigval, 0.0, None))


def _joint_samples(mean: Array, cov: Array, n_samples: int, seed: int) -> Array:
    """QMC samples of N(mean, cov), shape (n_samples, len(mean))."""
    root = psd_root(cov)
    if not np.any(root):
        return np.broadcast_to(mean, (n_samples, mean.shape[0])).copy()
    engine = qmc.MultivariateNormalQMC(
        mean=mean, cov_root=root, rng=np.random.default_rng(seed)
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return np.asarray(engine.random(n_samples))


class NehviSampler:
    """Sampled quality/latency values for observed points and candidates."""

    def __init__(
        self,
        quality: Array,
        latency: Array,
        n_observed: int,
        ref: Tuple[float, float],
    ):
        self.quality = quality  # (samples, observed + candidates)
        self.latency = latency  # same shape
        self.n_observed = n_observed
        self.ref = ref
        self.baselines: List[Array] = [
            np.column_stack([quality[s, :n_observed], latency[s, :n_observed]])
            for s in range(quality.shape[0])
        ]

    @property
    def n_candidates(self) -> int:
        return self.quality.shape[1] - self.n_observed

    def scores(self) -> Array:
        """Mean exclusive hypervolume improvement of every candidate."""
        total = np.zeros(self.n_candidates)
        n = self.n_observed
        for s, baseline in enumerate(self.baselines):
            cand = np.column_stack([self.quality[s, n:], self.latency[s, n:]])
            total += hypervolume_improvement(baseline, self.ref, cand)
        return total / len(self.baselines)

    def condition(self, candidate: int) -> None:
        """Append one candidate's sampled values to every baseline."""
        col = self.n_observed + candidate
        for s in range(len(self.baselines)):
            pick = np.array([[self.quality[s, col], self.latency[s, col]]])
            self.baselines[s] = np.vstack([self.baselines[s], pick])


def build_sampler(
    gp_quality: PosteriorModel,
    latency_model: PosteriorModel,
    observed: Sequence[ObservedTrial],
    ref: Sequence[float],
    candidates: Sequence[SearchPoint],
    mc_samples: int,
    seed: int,
    latency_variance: bool = False,
    space: SearchSpace = DEFAULT_SPACE,
) -> NehviSampler:
    if not candidates:
        raise AcquisitionError("candidate set is empty")
    if mc_samples < 1:
        raise AcquisitionError("mc_samples must be >= 1")
    X_obs = featurize_all([t.point for t in observed], space)
    X_cand = featurize_all(list(candidates), space)
    X_all = np.vstack([X_obs, X_cand])

    q_mean, q_cov = gp_quality.posterior(X_all)
    quality = _joint_samples(np.asarray(q_mean), np.asarray(q_cov), mc_samples, seed)

    observed_latency = np.array([t.latency for t in observed], dtype=np.float64)
    l_mean, l_cov = latency_model.posterior(X_cand)
    if latency_variance:
        cand_latency = _joint_samples(np.asarray(l_mean), np.asarray(l_cov), mc_samples, seed + 1)
    else:
        cand_latency = np.broadcast_to(np.asarray(l_mean), (mc_samples, len(candidates)))
    latency = np.hstack(
        [np.broadcast_to(observed_latency, (mc_samples, len(observed))), cand_latency]
    )
    return NehviSampler(quality, latency, len(observed), (float(ref[0]), float(ref[1])))


def nehvi_scores(
    gp_quality: PosteriorModel,
    latency_model: PosteriorModel,
    observed: Sequence[ObservedTrial],
    ref: Sequence[float],
    candidates: Sequence[SearchPoint],
    mc_samples: int = 128,
    seed: int = 0,
    latency_variance: bool = False,
    space: SearchSpace = DEFAULT_SPACE,
) -> Array:
    """Single-point NEHVI value of every candidate."""
    sampler = build_sampler(
        gp_quality,
        latency_model,
        observed,
        ref,
        candidates,
        mc_samples,
        seed,
        latency_variance,
        space,
    )
    return sampler.scores()


def nehvi_acquire(
    gp_quality: PosteriorModel,
    latency_model: PosteriorModel,
    observed: Sequence[ObservedTrial],
    ref: Sequence[float],
    candidates: Sequence[SearchPoint],
    q: int,
    mc_samples: int = 128,
    seed: int = 0,
    latency_variance: bool = False,
    space: SearchSpace = DEFAULT_SPACE,
) -> List[SearchPoint]:
    """
    Select a batch of ``q`` candidates by greedy sequential NEHVI.

    Args:
        gp_quality: quality surrogate with a joint ``posterior``
        latency_model: latency surrogate; its posterior mean is used as latency
        observed: evaluated trials (point and latency) forming the noisy baseline
        ref: reference point (loss, ttft_seconds)
        candidates: feasible candidate points
        q: batch size; capped at the number of candidates
        mc_samples: number of QMC posterior samples
        seed: seed for the QMC base samples
        latency_variance: sample latency from its posterior as well

    Returns:
        The selected points, in pick order
    """
    sampler = build_sampler(
        gp_quality,
        latency_model,
        observed,
        ref,
        candidates,
        mc_samples,
        seed,
        latency_variance,
        space,
    )
    chosen: List[int] = []
    for _ in range(min(q, len(candidates))):
        scores = sampler.scores()
        scores[chosen] = -np.inf
        best = int(np.argmax(scores))
        logging.debug(f"NEHVI pick {len(chosen) + 1}: {candidates[best]} ({scores[best]:.4g})")
        chosen.append(best)
        sampler.condition(best)
    return [candidates[i] for i in chosen]


def expected_improvement(
    mean: npt.ArrayLike, variance: npt.ArrayLike, best: float
) -> Array:
    """Expected improvement below ``best`` (minimisation) under Gaussian marginals."""
    mu = np.asarray(mean, dtype=np.float64)
    sd = np.sqrt(np.clip(np.asarray(variance, dtype=np.float64), 0.0, None))
    gap = best - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, gap / np.where(sd > 0, sd, 1.0), 0.0)
    ei = gap * norm.cdf(z) + sd * norm.pdf(z)
    return np.where(sd > 0, ei, np.clip(gap, 0.0, None))

