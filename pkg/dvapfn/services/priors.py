"""
Prior Service - synthetic regression datasets drawn from GP priors.

Each dataset is a pure function of ``(cfg, seed)``: kernel choice, sampled
lengthscales, inputs, the function draw, noise and the output shift each use
their own child stream of the dataset seed.
"""
import logging
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from dvapfn.errors import ConfigError, ContractError, GenerationError, NotSPDError
from dvapfn.models.datasets import SyntheticDataset
from dvapfn.models.enums import InputNormalization, KernelKind, RobustnessPrior
from dvapfn.numerics import SeededRng, Tensor, cholesky, derive_seed, sample_mvn
from dvapfn.schemas import KernelSpec, PriorConfig

logger = logging.getLogger(__name__)

# Relative to a unit-diagonal kernel; the sampler factors K / signal_variance.
PRIOR_JITTER = 1e-8

# Child streams of a dataset seed.
_KERNEL_CHOICE, _HYPERS, _INPUTS, _FUNCTION, _NOISE, _SHIFT = range(6)


def _as_array(X) -> np.ndarray:
    arr = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ContractError(f"kernel inputs must be (N, d), got {arr.shape}")
    return arr


def rbf(X1, X2, lengthscales: Union[float, Sequence[float]], variance: float) -> np.ndarray:
    """sigma^2 exp(-|x - x'|^2 / (2 l^2)); ``lengthscales`` may be per input (ARD)."""
    X1, X2 = _as_array(X1), _as_array(X2)
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=np.float64), (X1.shape[1],))
    if np.any(ls <= 0):
        raise ConfigError(f"lengthscales must be > 0, got {lengthscales}")
    sq = cdist(X1 / ls, X2 / ls, metric="sqeuclidean")
    return variance * np.exp(-0.5 * sq)


def linear_periodic(X1, X2, spec: KernelSpec) -> np.ndarray:
    """(slope^2 x.x' + offset) * exp(-2 sin^2(pi |x - x'| / period) / l_p^2), scaled by sigma^2."""
    X1, X2 = _as_array(X1), _as_array(X2)
    linear = spec.slope ** 2 * (X1 @ X2.T) + spec.linear_offset
    dist = cdist(X1, X2, metric="euclidean")
    periodic = np.exp(-2.0 * np.sin(np.pi * dist / spec.period) ** 2 / spec.periodic_lengthscale ** 2)
    return spec.signal_variance * linear * periodic


def kernel_between(X1, X2, spec: KernelSpec) -> np.ndarray:
    """Cross-covariance for a resolved kernel (no sampling ranges left)."""
    if spec.lengthscale <= 0 or spec.second_lengthscale <= 0:
        raise ConfigError("kernel lengthscales must be > 0")
    if spec.kind in (KernelKind.RBF_FIXED, KernelKind.RBF_SAMPLED):
        return rbf(X1, X2, spec.lengthscale, spec.signal_variance)
    if spec.kind == KernelKind.SUM_OF_TWO_RBF:
        return 0.5 * (
            rbf(X1, X2, spec.lengthscale, spec.signal_variance)
            + rbf(X1, X2, spec.second_lengthscale, spec.signal_variance)
        )
    if spec.kind == KernelKind.LINEAR_PERIODIC:
        return linear_periodic(X1, X2, spec)
    raise ConfigError(f"unknown kernel kind {spec.kind}")


def kernel_matrix(X, spec: KernelSpec) -> Tensor:
    """Symmetric covariance matrix K(X, X)."""
    X = _as_array(X)
    if X.shape[0] < 1:
        raise ContractError("kernel_matrix needs at least one point")
    K = kernel_between(X, X, spec)
    return Tensor._wrap(0.5 * (K + K.T))


def resolve_kernel(spec: KernelSpec, rng: SeededRng) -> KernelSpec:
    """Replace sampling ranges by concrete lengthscales drawn from ``rng``."""
    update = {}
    if spec.kind in (KernelKind.RBF_SAMPLED, KernelKind.SUM_OF_TWO_RBF) and spec.lengthscale_range:
        update["lengthscale"] = float(rng.child(0).uniform(*spec.lengthscale_range))
    if spec.kind == KernelKind.SUM_OF_TWO_RBF and spec.second_lengthscale_range:
        update["second_lengthscale"] = float(rng.child(1).uniform(*spec.second_lengthscale_range))
    return spec.model_copy(update=update) if update else spec


def _normalize_inputs(X: np.ndarray, how: InputNormalization) -> np.ndarray:
    if how == InputNormalization.UNIFORM01:
        return X
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (X - X.mean(axis=0)) / std


def sample_dataset(cfg: PriorConfig, seed: int) -> SyntheticDataset:
    """Draw one dataset: X ~ U[0,1]^d, y = f(X) + noise + shift with f ~ GP(0, k)."""
    rng = SeededRng(seed)
    kernel = cfg.kernel
    if cfg.mixture:
        kernel = cfg.mixture[rng.child(_KERNEL_CHOICE).choice(len(cfg.mixture))]
    kernel = resolve_kernel(kernel, rng.child(_HYPERS))

    n, d = cfg.points_per_dataset, cfg.input_dim
    X = rng.child(_INPUTS).uniform(0.0, 1.0, size=(n, d))
    K = kernel_matrix(X, kernel).data / kernel.signal_variance
    try:
        chol = cholesky(K, jitter=PRIOR_JITTER)
    except NotSPDError as exc:
        raise GenerationError(f"prior covariance not factorizable: {exc}", seed) from exc
    f = np.sqrt(kernel.signal_variance) * sample_mvn(chol, rng.child(_FUNCTION)).data
    noise = np.sqrt(cfg.noise_variance) * rng.child(_NOISE).normal(n)

    shift = cfg.output_shift
    if cfg.output_shift_range is not None:
        shift = float(rng.child(_SHIFT).uniform(*cfg.output_shift_range))

    return SyntheticDataset(_normalize_inputs(X, cfg.input_normalization), f + noise + shift, seed)


# ==================== Robustness and kernel-comparison priors ====================

ROBUSTNESS_KERNELS = {
    RobustnessPrior.SMOOTH: KernelSpec(kind=KernelKind.RBF_FIXED, lengthscale=0.25),
    RobustnessPrior.WIGGLY: KernelSpec(kind=KernelKind.RBF_FIXED, lengthscale=0.03),
    RobustnessPrior.MIXED: KernelSpec(
        kind=KernelKind.SUM_OF_TWO_RBF,
        lengthscale_range=(0.1, 0.5),
        second_lengthscale_range=(0.01, 0.04),
    ),
}


def robustness_prior_config(which: Union[RobustnessPrior, str], base: PriorConfig = None) -> PriorConfig:
    """1D prior for one robustness family; ``all`` mixes the three per dataset."""
    which = RobustnessPrior(which)
    base = base or PriorConfig()
    if which == RobustnessPrior.ALL:
        return base.model_copy(update={"mixture": list(ROBUSTNESS_KERNELS.values())})
    return base.model_copy(update={"kernel": ROBUSTNESS_KERNELS[which], "mixture": None})


def sample_robustness_prior(which: Union[RobustnessPrior, str], seed: int) -> SyntheticDataset:
    return sample_dataset(robustness_prior_config(which), seed)


def linear_periodic_config(cfg: PriorConfig) -> PriorConfig:
    if cfg.input_dim != 1:
        raise ContractError(f"linear-periodic prior is 1D only, got input_dim={cfg.input_dim}")
    kernel = cfg.kernel.model_copy(update={"kind": KernelKind.LINEAR_PERIODIC})
    return cfg.model_copy(update={"kernel": kernel, "mixture": None})


def sample_linear_periodic_dataset(cfg: PriorConfig, seed: int) -> SyntheticDataset:
    """Non-smooth oscillating functions: linear trend times a periodic kernel."""
    return sample_dataset(linear_periodic_config(cfg), seed)


def prior_output_samples(cfg: PriorConfig, n_samples: int, seed: int) -> np.ndarray:
    """Pool targets from as many datasets as needed to reach ``n_samples`` values."""
    values = []
    total, k = 0, 0
    while total < n_samples:
        ds = sample_dataset(cfg, derive_seed(seed, k))
        values.append(ds.y)
        total += ds.n_points
        k += 1
    logger.debug("pooled %d prior targets from %d datasets", total, k)
    return np.concatenate(values)[:n_samples]
