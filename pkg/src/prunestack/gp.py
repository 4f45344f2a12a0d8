"""
Gaussian-process regression surrogate.

Anisotropic squared-exponential kernel with learned signal and noise
variances. Inputs are z-scored and outputs standardised internally;
hyperparameters are fitted by maximising the log marginal likelihood with
multi-start L-BFGS-B on log-space parameters using the analytic gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Tuple

import numpy as np
import numpy.typing as npt
from scipy import linalg
from scipy.optimize import minimize

Array = npt.NDArray[np.float64]

NOISE_FLOOR = 1e-6
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)
_LOG_LENGTHSCALE_BOUNDS = (np.log(1e-2), np.log(1e3))
_LOG_SIGNAL_BOUNDS = (np.log(1e-4), np.log(1e2))


class GPFitError(Exception):
    """Raised when a GP cannot be fitted (too few points, non-finite data, singular kernel)."""

    pass


class Regressor(Protocol):
    def predict(self, X: npt.ArrayLike) -> Tuple[Array, Array]: ...


def _sq_dists(A: Array, B: Array) -> Array:
    """Per-dimension squared differences, shape (d, len(A), len(B))."""
    return (A.T[:, :, None] - B.T[:, None, :]) ** 2


def _cholesky(K: Array) -> Tuple[Array, float]:
    scale = float(np.mean(np.diag(K))) or 1.0
    for jitter in JITTER_LADDER:
        try:
            chol = linalg.cholesky(K + jitter * scale * np.eye(K.shape[0]), lower=True)
            if jitter:
                logging.debug(f"Kernel matrix needed jitter {jitter * scale:.2e}")
            return chol, jitter * scale
        except linalg.LinAlgError:
            continue
    raise GPFitError("kernel matrix is singular even after jitter escalation")


@dataclass
class GPSurrogate:
    """Fitted GP; variances are stored in standardised output units."""

    X_train: Array
    y_train: Array
    lengthscales: Array
    signal_variance: float
    noise_variance: float
    x_mean: Array
    x_scale: Array
    y_mean: float
    y_scale: float
    chol: Array
    alpha: Array
    jitter: float = 0.0
    log_marginal_likelihood: float = float("nan")

    @classmethod
    def from_hyperparameters(
        cls,
        X: npt.ArrayLike,
        y: npt.ArrayLike,
        lengthscales: npt.ArrayLike,
        signal_variance: float,
        noise_variance: float,
        standardize: bool = True,
    ) -> "GPSurrogate":
        """Condition a GP with fixed hyperparameters on (X, y)."""
        X_arr = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y_arr = np.asarray(y, dtype=np.float64).reshape(-1)
        x_mean, x_scale, y_mean, y_scale = _standardizer(X_arr, y_arr, standardize)
        Xs = (X_arr - x_mean) / x_scale
        ys = (y_arr - y_mean) / y_scale
        ls = np.asarray(lengthscales, dtype=np.float64).reshape(-1)
        K = _se_kernel(Xs, Xs, ls, signal_variance) + noise_variance * np.eye(len(ys))
        chol, jitter = _cholesky(K)
        alpha = linalg.cho_solve((chol, True), ys)
        lml = -(
            0.5 * ys @ alpha + np.sum(np.log(np.diag(chol))) + 0.5 * len(ys) * np.log(2 * np.pi)
        )
        return cls(
            X_train=X_arr,
            y_train=y_arr,
            lengthscales=ls,
            signal_variance=float(signal_variance),
            noise_variance=float(noise_variance),
            x_mean=x_mean,
            x_scale=x_scale,
            y_mean=y_mean,
            y_scale=y_scale,
            chol=chol,
            alpha=alpha,
            jitter=jitter,
            log_marginal_likelihood=float(lml),
        )

    @property
    def n_train(self) -> int:
        return int(self.y_train.shape[0])

    @property
    def prior_variance(self) -> float:
        return self.signal_variance * self.y_scale**2

    @property
    def noise_variance_raw(self) -> float:
        return (self.noise_variance + self.jitter) * self.y_scale**2

    def _cross(self, X: npt.ArrayLike) -> Tuple[Array, Array]:
        Xs = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.x_mean) / self.x_scale
        Xt = (self.X_train - self.x_mean) / self.x_scale
        return Xs, _se_kernel(Xs, Xt, self.lengthscales, self.signal_variance)

    def predict(self, X: npt.ArrayLike) -> Tuple[Array, Array]:
        """Latent posterior mean and marginal variance at each row of X, original units."""
        _, Ks = self._cross(X)
        mean = Ks @ self.alpha
        v = linalg.solve_triangular(self.chol, Ks.T, lower=True)
        var = np.maximum(self.signal_variance - np.sum(v * v, axis=0), 0.0)
        return mean * self.y_scale + self.y_mean, var * self.y_scale**2

    def posterior(self, X: npt.ArrayLike) -> Tuple[Array, Array]:
        """Joint latent posterior mean and covariance at the rows of X, original units."""
        Xs, Ks = self._cross(X)
        Kss = _se_kernel(Xs, Xs, self.lengthscales, self.signal_variance)
        v = linalg.solve_triangular(self.chol, Ks.T, lower=True)
        cov = Kss - v.T @ v
        cov = 0.5 * (cov + cov.T)
        mean = Ks @ self.alpha
        return mean * self.y_scale + self.y_mean, cov * self.y_scale**2


def _se_kernel(A: Array, B: Array, lengthscales: Array, signal_variance: float) -> Array:
    scaled = np.tensordot(1.0 / lengthscales**2, _sq_dists(A, B), axes=1)
    return signal_variance * np.exp(-0.5 * scaled)


def _standardizer(X: Array, y: Array, standardize: bool) -> Tuple[Array, Array, float, float]:
    if not standardize:
        return np.zeros(X.shape[1]), np.ones(X.shape[1]), 0.0, 1.0
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    x_scale[x_scale == 0] = 1.0
    y_scale = float(y.std()) or 1.0
    return x_mean, x_scale, float(y.mean()), y_scale


def _nlml_and_grad(theta: Array, sq: Array, y: Array) -> Tuple[float, Array]:
    """Negative log marginal likelihood and its gradient w.r.t. log hyperparameters."""
    d, n = sq.shape[0], y.shape[0]
    ls2 = np.exp(2.0 * theta[:d])
    sf2, sn2 = np.exp(theta[d]), np.exp(theta[d + 1])
    K = sf2 * np.exp(-0.5 * np.tensordot(1.0 / ls2, sq, axes=1))
    try:
        factor = linalg.cho_factor(K + sn2 * np.eye(n), lower=True)
    except linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = linalg.cho_solve(factor, y)
    nlml = 0.5 * y @ alpha + np.sum(np.log(np.diag(factor[0]))) + 0.5 * n * np.log(2 * np.pi)

    W = linalg.cho_solve(factor, np.eye(n)) - np.outer(alpha, alpha)
    WK = W * K
    grad = np.empty_like(theta)
    grad[:d] = 0.5 * np.tensordot(sq, WK, axes=([1, 2], [0, 1])) / ls2
    grad[d] = 0.5 * np.sum(WK)
    grad[d + 1] = 0.5 * sn2 * np.trace(W)
    return float(nlml), grad


def gp_fit(
    X: npt.ArrayLike,
    y: npt.ArrayLike,
    n_restarts: int = 4,
    seed: int = 0,
    noise_floor: float = NOISE_FLOOR,
    standardize: bool = True,
) -> GPSurrogate:
    """
    Fit GP hyperparameters by maximum marginal likelihood.

    Args:
        X: feature matrix (n, d), n >= 2
        y: observations (n,)
        n_restarts: random restarts in addition to the default start
        seed: seed for restart initialisation
        noise_floor: lower bound on the standardised noise variance
        standardize: z-score inputs and outputs before fitting

    Returns:
        Fitted GPSurrogate
    """
    X_arr = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y_arr = np.asarray(y, dtype=np.float64).reshape(-1)
    if X_arr.shape[0] != y_arr.shape[0]:
        raise GPFitError(f"{X_arr.shape[0]} inputs for {y_arr.shape[0]} observations")
    if y_arr.shape[0] < 2:
        raise GPFitError("need at least 2 observations")
    if not (np.all(np.isfinite(X_arr)) and np.all(np.isfinite(y_arr))):
        raise GPFitError("inputs and observations must be finite")

    x_mean, x_scale, y_mean, y_scale = _standardizer(X_arr, y_arr, standardize)
    Xs = (X_arr - x_mean) / x_scale
    ys = (y_arr - y_mean) / y_scale
    sq = _sq_dists(Xs, Xs)
    d = X_arr.shape[1]

    noise_bounds = (np.log(noise_floor), np.log(1.0))
    bounds = [_LOG_LENGTHSCALE_BOUNDS] * d + [_LOG_SIGNAL_BOUNDS, noise_bounds]
    rng = np.random.default_rng(seed)
    starts = [np.concatenate([np.zeros(d), [0.0, max(np.log(1e-2), noise_bounds[0])]])]
    for _ in range(n_restarts):
        starts.append(
            np.concatenate(
                [
                    rng.uniform(np.log(0.1), np.log(10.0), d),
                    [rng.uniform(np.log(0.1), np.log(10.0))],
                    [rng.uniform(noise_bounds[0], np.log(0.1))],
                ]
            )
        )

    best: Optional[Tuple[float, Array]] = None
    for x0 in starts:
        result = minimize(
            _nlml_and_grad, x0, args=(sq, ys), jac=True, method="L-BFGS-B", bounds=bounds
        )
        if not np.isfinite(result.fun) or result.fun >= 1e25:
            continue
        if best is None or result.fun < best[0]:
            best = (float(result.fun), result.x)
    if best is None:
        raise GPFitError("hyperparameter optimisation failed from every start")

    theta = best[1]
    gp = GPSurrogate.from_hyperparameters(
        X_arr,
        y_arr,
        lengthscales=np.exp(theta[:d]),
        signal_variance=float(np.exp(theta[d])),
        noise_variance=float(np.exp(theta[d + 1])),
        standardize=standardize,
    )
    logging.debug(
        f"GP fit on {len(y_arr)} points: lml={gp.log_marginal_likelihood:.3f}, "
        f"noise={gp.noise_variance:.2e}"
    )
    return gp


def gp_predict(gp: GPSurrogate, x: npt.ArrayLike) -> Tuple[float, float]:
    """Posterior mean and variance at a single feature vector."""
    mean, var = gp.predict(np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(mean[0]), float(var[0])


def r2_score(y: npt.ArrayLike, predicted: npt.ArrayLike) -> float:
    """Coefficient of determination ``1 - SSE/SST``."""
    y_arr = np.asarray(y, dtype=np.float64)
    pred = np.asarray(predicted, dtype=np.float64)
    sst = float(np.sum((y_arr - y_arr.mean()) ** 2))
    if sst == 0.0:
        raise ValueError("R^2 is undefined for constant targets")
    return 1.0 - float(np.sum((y_arr - pred) ** 2)) / sst


def loo_r2(gp: GPSurrogate) -> float:
    """Closed-form leave-one-out R^2 of a fitted GP (hyperparameters held fixed)."""
    k_inv = linalg.cho_solve((gp.chol, True), np.eye(gp.n_train))
    residual = gp.alpha / np.diag(k_inv)
    ys = (gp.y_train - gp.y_mean) / gp.y_scale
    return r2_score(ys, ys - residual)


def cross_val_r2(
    X: npt.ArrayLike,
    y: npt.ArrayLike,
    folds: int = 5,
    seed: int = 0,
    fit: Optional[Callable[[Array, Array], Regressor]] = None,
) -> float:
    """
    K-fold cross-validated R^2 from out-of-fold predictions.

    Args:
        X: feature matrix (n, d)
        y: observations (n,)
        folds: number of folds, 2 <= folds <= n
        seed: seed for the fold assignment (and the default GP fit)
        fit: training function returning a model with ``predict``; defaults to gp_fit

    Returns:
        1 - SSE/SST over all out-of-fold predictions
    """
    X_arr = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y_arr = np.asarray(y, dtype=np.float64).reshape(-1)
    n = y_arr.shape[0]
    if folds < 2 or n < folds:
        raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    if fit is None:

        def fit(X_train: Array, y_train: Array) -> Regressor:
            return gp_fit(X_train, y_train, seed=seed)

    perm = np.random.default_rng(seed).permutation(n)
    predicted = np.empty(n)
    for held_out in np.array_split(perm, folds):
        train = np.setdiff1d(perm, held_out)
        model = fit(X_arr[train], y_arr[train])
        mean, _ = model.predict(X_arr[held_out])
        predicted[held_out] = mean
    return r2_score(y_arr, predicted)
