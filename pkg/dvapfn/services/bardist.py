"""
Bar Distribution Service - bucketized predictive densities.

Targets are discretized into ``B`` buckets whose edges are quantiles of prior
samples. A distribution is a logit per bucket with uniform density inside each
bucket. Losses use the density convention ``-log(p_b / w_b)`` so values are
comparable across bucket counts. Targets outside the support are clamped to
the nearest edge bucket.

All read-outs accept either one logit vector ``(B,)`` or a batch ``(M, B)``.
"""
from dataclasses import dataclass
from typing import Dict, List, Union

import numpy as np
from scipy.special import log_softmax, softmax

from dvapfn.errors import ConfigError, ContractError
from dvapfn.numerics import Tensor, log_softmax_rows, reduce_sum, take_rows

EDGE_BUMP = 1e-9
MIN_SAMPLES_PER_BUCKET = 10


@dataclass(frozen=True)
class BucketSpec:
    """Strictly increasing bucket edges (B + 1 values)."""
    edges: np.ndarray

    def __post_init__(self):
        edges = np.array(self.edges, dtype=np.float64, copy=True)
        if edges.ndim != 1 or edges.size < 2:
            raise ContractError(f"bucket edges need at least two values, got shape {edges.shape}")
        if np.any(np.diff(edges) <= 0) or not np.all(np.isfinite(edges)):
            raise ContractError("bucket edges must be finite and strictly increasing")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def B(self) -> int:
        return self.edges.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def support(self) -> tuple:
        return float(self.edges[0]), float(self.edges[-1])

    def to_header(self) -> Dict[str, object]:
        return {"B": self.B, "edges": [float(e) for e in self.edges]}

    def __eq__(self, other) -> bool:
        return isinstance(other, BucketSpec) and np.array_equal(self.edges, other.edges)

    def __hash__(self) -> int:
        return hash(self.edges.tobytes())


@dataclass(frozen=True)
class BarDistribution:
    logits: np.ndarray
    spec: BucketSpec

    def __post_init__(self):
        logits = np.asarray(self.logits.data if isinstance(self.logits, Tensor) else self.logits, dtype=np.float64)
        if logits.shape[-1] != self.spec.B:
            raise ContractError(f"logits have {logits.shape[-1]} buckets, spec has {self.spec.B}")
        object.__setattr__(self, "logits", logits)

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits, axis=-1)


def build_buckets(prior_samples, B: int) -> BucketSpec:
    """Edges at the empirical quantiles i/B of ``prior_samples``."""
    samples = np.asarray(prior_samples, dtype=np.float64).reshape(-1)
    if B < 1:
        raise ConfigError(f"bucket count must be >= 1, got {B}")
    if samples.size < MIN_SAMPLES_PER_BUCKET * B:
        raise ConfigError(f"need at least {MIN_SAMPLES_PER_BUCKET * B} samples for {B} buckets, got {samples.size}")
    if not np.all(np.isfinite(samples)):
        raise ConfigError("prior samples contain non-finite values")
    edges = np.quantile(samples, np.linspace(0.0, 1.0, B + 1))
    for i in range(1, edges.size):
        if edges[i] <= edges[i - 1]:
            edges[i] = edges[i - 1] + EDGE_BUMP
    return BucketSpec(edges)


def uniform_buckets(low: float, high: float, B: int) -> BucketSpec:
    return BucketSpec(np.linspace(low, high, B + 1))


def bucket_index(spec: BucketSpec, y) -> np.ndarray:
    """Bucket of each target; values outside the support land in an edge bucket."""
    idx = np.searchsorted(spec.edges, np.asarray(y, dtype=np.float64), side="right") - 1
    return np.clip(idx, 0, spec.B - 1)


# ==================== Read-outs ====================

def nll(dist: BarDistribution, y_true) -> Union[float, np.ndarray]:
    """Negative log density at ``y_true`` (one value per logit row)."""
    idx = bucket_index(dist.spec, y_true)
    logp = log_softmax(dist.logits, axis=-1)
    picked = np.take_along_axis(logp, np.asarray(idx)[..., None], axis=-1)[..., 0] if logp.ndim > 1 else logp[idx]
    out = -(picked - np.log(dist.spec.widths[idx]))
    return float(out) if np.ndim(out) == 0 else out


def mean(dist: BarDistribution) -> Union[float, np.ndarray]:
    out = dist.probs @ dist.spec.midpoints
    return float(out) if np.ndim(out) == 0 else out


def variance(dist: BarDistribution) -> Union[float, np.ndarray]:
    """Second central moment under within-bucket uniform density."""
    spec = dist.spec
    second = dist.probs @ (spec.midpoints ** 2 + spec.widths ** 2 / 12.0)
    out = np.maximum(second - np.asarray(mean(dist)) ** 2, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def cdf(dist: BarDistribution, y) -> Union[float, np.ndarray]:
    """P(Y <= y), piecewise linear inside each bucket."""
    spec = dist.spec
    probs = dist.probs
    y = np.clip(np.asarray(y, dtype=np.float64), spec.edges[0], spec.edges[-1])
    idx = bucket_index(spec, y)
    cum = np.concatenate([np.zeros(probs.shape[:-1] + (1,)), np.cumsum(probs, axis=-1)], axis=-1)
    frac = (y - spec.edges[idx]) / spec.widths[idx]
    if probs.ndim == 1:
        out = cum[idx] + frac * probs[idx]
    else:
        rows = np.arange(probs.shape[0])
        out = cum[rows, idx] + frac * probs[rows, idx]
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def _quantile_row(probs: np.ndarray, edges: np.ndarray, q: float) -> float:
    cum = np.concatenate([[0.0], np.cumsum(probs)])
    b = int(np.clip(np.searchsorted(cum, q, side="right") - 1, 0, probs.size - 1))
    if probs[b] <= 0:
        return float(edges[b])
    frac = min(max((q - cum[b]) / probs[b], 0.0), 1.0)
    return float(edges[b] + frac * (edges[b + 1] - edges[b]))


def quantile(dist: BarDistribution, q: float) -> Union[float, np.ndarray]:
    """Inverse CDF at ``q`` in (0, 1)."""
    if not 0.0 < q < 1.0:
        raise ContractError(f"quantile level must be in (0, 1), got {q}")
    probs = dist.probs
    if probs.ndim == 1:
        return _quantile_row(probs, dist.spec.edges, q)
    return np.array([_quantile_row(row, dist.spec.edges, q) for row in probs])


def interval_probability(dist: BarDistribution, low: float, high: float) -> Union[float, np.ndarray]:
    if high < low:
        raise ContractError(f"interval bounds reversed: [{low}, {high}]")
    return cdf(dist, high) - cdf(dist, low)


# ==================== Training loss ====================

def nll_sum_tape(logits: Tensor, spec: BucketSpec, y_true) -> Tensor:
    """Summed density NLL over logit rows, recorded on the logits' tape."""
    idx = bucket_index(spec, y_true)
    picked = take_rows(log_softmax_rows(logits), idx)
    return reduce_sum(picked) * -1.0 + float(np.log(spec.widths[idx]).sum())


def uniform_nll(spec: BucketSpec, y_true) -> List[float]:
    """NLL of uniform logits, the untrained reference level."""
    dist = BarDistribution(np.zeros(spec.B), spec)
    return [nll(dist, y) for y in np.atleast_1d(y_true)]
