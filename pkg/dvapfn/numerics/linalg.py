"""
SPD linear algebra: jittered Cholesky and multivariate-normal sampling.
"""
import logging
from typing import List

import numpy as np
from scipy import linalg

from dvapfn.errors import ContractError, NotSPDError
from dvapfn.numerics.rng import SeededRng
from dvapfn.numerics.tensor import Tensor, as_tensor

logger = logging.getLogger(__name__)

JITTER_START = 1e-6
JITTER_FACTOR = 10.0
JITTER_MAX = 1e-3


def jitter_schedule(jitter: float) -> List[float]:
    """Requested jitter first, then x10 escalation from 1e-6 up to 1e-3."""
    schedule = [float(jitter)]
    step = max(float(jitter) * JITTER_FACTOR, JITTER_START) if jitter > 0 else JITTER_START
    while step <= JITTER_MAX * (1 + 1e-12):
        schedule.append(step)
        step *= JITTER_FACTOR
    return schedule


def cholesky(a, jitter: float = 0.0) -> Tensor:
    """Lower Cholesky factor of ``a + jitter * I`` with jitter escalation."""
    a = as_tensor(a).data
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"cholesky needs a square matrix, got {a.shape}")
    if jitter < 0:
        raise ContractError(f"jitter must be >= 0, got {jitter}")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise ContractError("cholesky needs a symmetric matrix")
    eye = np.eye(a.shape[0])
    tried = []
    for j in jitter_schedule(jitter):
        tried.append(j)
        try:
            lower = linalg.cholesky(a + j * eye, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        if len(tried) > 1:
            logger.debug("cholesky needed jitter %.0e", j)
        return Tensor._wrap(lower)
    raise NotSPDError("matrix is not positive definite", tried)


def sample_mvn(chol_lower, rng: SeededRng) -> Tensor:
    """Draw ``L z`` with ``z`` standard normal from ``rng``."""
    lower = as_tensor(chol_lower).data
    z = rng.normal(lower.shape[0])
    return Tensor._wrap(lower @ z)
