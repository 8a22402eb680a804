"""
GP Baseline Service - exact RBF Gaussian-process regression.

Hyperparameters are chosen by log-marginal-likelihood over a log-spaced
(lengthscale x noise) grid with the signal variance matched to var(y).
"""
import logging
from dataclasses import dataclass
from itertools import product
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg

from dvapfn.errors import ContractError, NotSPDError
from dvapfn.numerics import cholesky
from dvapfn.schemas import GPHyper
from dvapfn.services.priors import rbf

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
DEFAULT_LENGTHSCALES = tuple(np.geomspace(0.05, 2.0, 9))
DEFAULT_NOISES = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


@dataclass
class GPPosterior:
    """Posterior mean/variance per test point and the weights beta (M x n) over training targets."""
    mean: np.ndarray
    variance: np.ndarray
    beta: np.ndarray


def _inputs(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


def _factor(hyper: GPHyper, X: np.ndarray):
    K = rbf(X, X, hyper.lengthscales, hyper.signal_variance)
    K = 0.5 * (K + K.T) + hyper.noise_variance * np.eye(X.shape[0])
    return cholesky(K).data, K


def gp_predict(hyper: GPHyper, X_train, y_train, X_test) -> GPPosterior:
    """mu(x*) = beta(x*) y with beta = k(x*, X) [K + s^2 I]^-1; variance includes the noise term."""
    X_train, X_test = _inputs(X_train), _inputs(X_test)
    y_train = np.asarray(y_train, dtype=np.float64).reshape(-1)
    if X_train.shape[0] == 0:
        raise ContractError("gp_predict needs at least one training point")
    if X_train.shape[0] != y_train.size:
        raise ContractError(f"{X_train.shape[0]} training inputs but {y_train.size} targets")
    lower, _ = _factor(hyper, X_train)
    cross = rbf(X_test, X_train, hyper.lengthscales, hyper.signal_variance)
    beta = linalg.cho_solve((lower, True), cross.T).T
    mean = beta @ y_train
    variance = hyper.signal_variance - np.sum(cross * beta, axis=1) + hyper.noise_variance
    return GPPosterior(mean=mean, variance=np.maximum(variance, 0.0), beta=beta)


def log_marginal_likelihood(hyper: GPHyper, X, y) -> float:
    """log N(y | 0, K + s^2 I) via the Cholesky factor."""
    X = _inputs(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    lower, _ = _factor(hyper, X)
    alpha = linalg.cho_solve((lower, True), y)
    n = y.size
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(lower))) - 0.5 * n * np.log(2.0 * np.pi))


def lml_grad_log_lengthscale(hyper: GPHyper, X, y) -> np.ndarray:
    """d LML / d log(lengthscale), one entry per lengthscale (shared or ARD).

    0.5 tr((alpha alpha^T - K^-1) dK) with dK = K_f * (x_d - x'_d)^2 / l_d^2.
    """
    X = _inputs(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    lower, _ = _factor(hyper, X)
    alpha = linalg.cho_solve((lower, True), y)
    inner = np.outer(alpha, alpha) - linalg.cho_solve((lower, True), np.eye(y.size))
    K_f = rbf(X, X, hyper.lengthscales, hyper.signal_variance)
    ls = np.broadcast_to(np.asarray(hyper.lengthscales, dtype=np.float64), (X.shape[1],))
    sq = (X[:, None, :] - X[None, :, :]) ** 2 / ls ** 2
    if len(hyper.lengthscales) == 1:
        return np.array([0.5 * np.sum(inner * K_f * sq.sum(axis=2))])
    return np.array([0.5 * np.sum(inner * K_f * sq[:, :, d]) for d in range(X.shape[1])])


# ==================== Grid search ====================

def signal_variance_for(y) -> float:
    return max(float(np.var(np.asarray(y, dtype=np.float64))), VARIANCE_FLOOR)


def default_grid(
    y,
    lengthscales: Sequence[float] = DEFAULT_LENGTHSCALES,
    noises: Sequence[float] = DEFAULT_NOISES,
) -> List[GPHyper]:
    """Shared-lengthscale grid with the signal variance set from var(y)."""
    sv = signal_variance_for(y)
    return [GPHyper(lengthscales=[float(ls)], signal_variance=sv, noise_variance=float(nv)) for ls, nv in product(lengthscales, noises)]


def _score(hyper: GPHyper, X, y) -> float:
    try:
        return log_marginal_likelihood(hyper, X, y)
    except NotSPDError as exc:
        logger.debug("skipping grid point %s: %s", hyper, exc)
        return -np.inf


def gp_fit(X, y, grid: Optional[Sequence[GPHyper]] = None) -> GPHyper:
    """Grid point with the highest LML; ties go to the larger lengthscale, then the larger noise."""
    grid = list(grid) if grid is not None else default_grid(y)
    if not grid:
        raise ContractError("gp_fit needs a nonempty grid")
    scored = [(_score(h, X, y), float(np.mean(h.lengthscales)), h.noise_variance, i) for i, h in enumerate(grid)]
    best = max(scored, key=lambda s: (s[0], s[1], s[2]))
    if not np.isfinite(best[0]):
        raise NotSPDError("no grid point gave a factorizable covariance", [0.0])
    return grid[best[3]]


def gp_fit_ard(
    X,
    y,
    lengthscales: Sequence[float] = DEFAULT_LENGTHSCALES,
    noises: Sequence[float] = DEFAULT_NOISES,
    sweeps: int = 2,
) -> GPHyper:
    """Per-input lengthscales by coordinate sweeps over the grid, starting from the shared fit."""
    X = _inputs(X)
    start = gp_fit(X, y, default_grid(y, lengthscales, noises))
    current = list(start.lengthscales) * X.shape[1]
    sv, noise = start.signal_variance, start.noise_variance
    for _ in range(sweeps):
        for d in range(X.shape[1]):
            candidates = []
            for ls in lengthscales:
                trial = list(current)
                trial[d] = float(ls)
                candidates.append(GPHyper(lengthscales=trial, signal_variance=sv, noise_variance=noise))
            current = list(gp_fit(X, y, candidates).lengthscales)
        noise = gp_fit(X, y, [GPHyper(lengthscales=current, signal_variance=sv, noise_variance=float(nv)) for nv in noises]).noise_variance
    return GPHyper(lengthscales=current, signal_variance=sv, noise_variance=noise)
