"""
Evaluation Service - point-prediction metrics, context sweeps, calibration,
post-hoc context filters, the Rosenbrock task and timing comparisons.

A predictor is anything with ``name`` and ``predict(context, query_x)``
returning per-query (mean, variance). Test suites are lists of
``SyntheticDataset``; the first ``n_context`` rows are the context and the
last ``n_test`` rows are the test points, so sweeps over the context size
share one fixed test set.
"""
import logging
import statistics
import time
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from dvapfn.errors import ContractError
from dvapfn.models.datasets import SyntheticDataset
from dvapfn.models.enums import FilterKind
from dvapfn.models.results import CoverageReport, Metrics, MetricsRow, TimingRow
from dvapfn.numerics import SeededRng
from dvapfn.schemas import AttentionSpec, GPHyper, ModelSpec, PostHocFilter
from dvapfn.services import bardist
from dvapfn.services.backbones import PFNModel, build_model, forward
from dvapfn.services.gp_baseline import gp_fit, gp_fit_ard, gp_predict
from dvapfn.services.training import AdamWState, train_step

logger = logging.getLogger(__name__)

COVERAGE_BANDS = (0.1, 1.0, 2.0)
ROSENBROCK_DIM = 5


# ==================== Predictors ====================

class Predictor(Protocol):
    name: str

    def predict(self, context: SyntheticDataset, query_x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ...


class PFNPredictor:
    """Bar-distribution mean and variance of a trained model."""

    def __init__(self, model: PFNModel, name: Optional[str] = None):
        self.model = model
        self.name = name or f"{model.spec.backbone.value}+{model.spec.attention.kind.value}"

    def predict(self, context: SyntheticDataset, query_x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        logits = forward(self.model, context, query_x)
        dist = bardist.BarDistribution(logits.data, self.model.buckets)
        return np.atleast_1d(bardist.mean(dist)), np.atleast_1d(bardist.variance(dist))


class GPPredictor:
    """Exact GP on context targets centred by their mean.

    With ``hyper`` unset the hyperparameters are fitted per context by grid
    search (or ARD coordinate sweeps).
    """

    def __init__(self, hyper: Optional[GPHyper] = None, ard: bool = False, grid: Optional[Sequence[GPHyper]] = None, name: str = "GP"):
        self.hyper = hyper
        self.ard = ard
        self.grid = grid
        self.name = name

    def fitted(self, context: SyntheticDataset) -> GPHyper:
        if self.hyper is not None:
            return self.hyper
        centred = context.y - context.y.mean()
        if self.ard:
            return gp_fit_ard(context.X, centred)
        return gp_fit(context.X, centred, self.grid)

    def predict(self, context: SyntheticDataset, query_x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        offset = float(context.y.mean())
        posterior = gp_predict(self.fitted(context), context.X, context.y - offset, query_x)
        return posterior.mean + offset, posterior.variance


class FilteredPredictor:
    """Runs ``base`` on a per-query filtered context.

    Queries that select the same context rows are predicted in one call, so a
    filter that keeps everything reproduces ``base`` exactly.
    """

    def __init__(self, base: Predictor, posthoc: PostHocFilter):
        self.base = base
        self.posthoc = posthoc
        suffix = f"k={posthoc.k}" if posthoc.kind == FilterKind.KNN else f"gamma={posthoc.gamma}"
        self.name = f"{base.name}[{posthoc.kind.value} {suffix}]"

    def predict(self, context: SyntheticDataset, query_x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        query_x = np.atleast_2d(query_x)
        groups: Dict[Tuple[int, ...], List[int]] = {}
        for i, x_star in enumerate(query_x):
            groups.setdefault(tuple(filter_indices(context, x_star, self.posthoc)), []).append(i)
        mean, var = np.empty(query_x.shape[0]), np.empty(query_x.shape[0])
        for rows, members in groups.items():
            m, v = self.base.predict(context.take(list(rows)), query_x[members])
            mean[members], var[members] = m, v
        return mean, var


# ==================== Post-hoc filters ====================

def filter_indices(context: SyntheticDataset, x_star, posthoc: PostHocFilter) -> np.ndarray:
    """Context rows kept for query ``x_star``, in their original order."""
    n = context.n_points
    if n == 0:
        raise ContractError("cannot filter an empty context")
    dist = cdist(np.atleast_2d(np.asarray(x_star, dtype=np.float64)), context.X)[0]
    if posthoc.kind == FilterKind.KNN:
        if posthoc.k > n:
            raise ContractError(f"k={posthoc.k} exceeds the context size {n}")
        kept = np.argsort(dist, kind="stable")[: posthoc.k]
    else:
        factors = np.exp(-posthoc.gamma * dist)
        kept = np.flatnonzero(factors > np.median(factors))
        if kept.size == 0:
            kept = np.array([int(np.argmin(dist))])
    return np.sort(kept)


def apply_posthoc_filter(context: SyntheticDataset, x_star, posthoc: PostHocFilter) -> SyntheticDataset:
    """knn keeps the k nearest (ties to the lower index); exponential keeps
    rows whose exp(-gamma * distance) is above the median factor."""
    return context.take(filter_indices(context, x_star, posthoc))


# ==================== Metrics ====================

def _check_sizes(suite: Sequence[SyntheticDataset], n_context: int, n_test: int) -> None:
    if not suite:
        raise ContractError("test suite is empty")
    if n_context < 1 or n_test < 1:
        raise ContractError(f"need n_context >= 1 and n_test >= 1, got {n_context} and {n_test}")
    short = [ds.seed for ds in suite if ds.n_points < n_context + n_test]
    if short:
        raise ContractError(f"{len(short)} test datasets have fewer than {n_context + n_test} points (seeds {short[:3]})")


def _default_n_test(suite: Sequence[SyntheticDataset], n_context: int) -> int:
    return min(ds.n_points for ds in suite) - n_context if suite else 0


def _predictions(predictor: Predictor, suite, n_context: int, n_test: int):
    _check_sizes(suite, n_context, n_test)
    means, variances, targets = [], [], []
    elapsed = 0.0
    for ds in suite:
        context, test = ds.head(n_context), ds.tail(ds.n_points - n_test)
        started = time.perf_counter()
        mean, var = predictor.predict(context, test.X)
        elapsed += time.perf_counter() - started
        means.append(mean)
        variances.append(var)
        targets.append(test.y)
    return np.concatenate(means), np.concatenate(variances), np.concatenate(targets), elapsed


def evaluate(predictor: Predictor, suite: Sequence[SyntheticDataset], n_context: int, n_test: Optional[int] = None) -> Metrics:
    """MSE/MAE/max error of the point predictions over every test point."""
    n_test = n_test if n_test is not None else _default_n_test(suite, n_context)
    mean, _, target, elapsed = _predictions(predictor, suite, n_context, n_test)
    metrics = Metrics.from_errors(mean - target, elapsed)
    logger.info("%s @ %d context: MSE %.3e MAE %.3e", predictor.name, n_context, metrics.mse, metrics.mae)
    return metrics


def sweep_context(predictor: Predictor, suite: Sequence[SyntheticDataset], sizes: Sequence[int], n_test: Optional[int] = None) -> List[MetricsRow]:
    """One metrics row per context size, all on the same test points."""
    sizes = list(sizes)
    if not sizes:
        raise ContractError("sweep_context needs at least one size")
    if sizes != sorted(sizes):
        raise ContractError(f"context sizes must be ascending, got {sizes}")
    n_test = n_test if n_test is not None else _default_n_test(suite, sizes[-1])
    return [MetricsRow.from_metrics(predictor.name, n, evaluate(predictor, suite, n, n_test)) for n in sizes]


def coverage(predictor: Predictor, suite: Sequence[SyntheticDataset], n_context: int, n_test: Optional[int] = None) -> CoverageReport:
    """Fraction of targets within mean +/- c * sigma for each band c."""
    n_test = n_test if n_test is not None else _default_n_test(suite, n_context)
    mean, var, target, _ = _predictions(predictor, suite, n_context, n_test)
    sigma = np.sqrt(np.maximum(var, 0.0))
    gap = np.abs(target - mean)
    inside = [float(np.mean(gap <= c * sigma)) for c in COVERAGE_BANDS]
    return CoverageReport(predictor.name, *inside, n_test=int(target.size))


def k_sensitivity(
    predictor: Predictor,
    suite: Sequence[SyntheticDataset],
    n_context: int,
    ks: Sequence[int],
    n_test: Optional[int] = None,
) -> List[MetricsRow]:
    """Unfiltered metrics (k=0) followed by one knn-filtered row per k."""
    n_test = n_test if n_test is not None else _default_n_test(suite, n_context)
    rows = [MetricsRow.from_metrics(predictor.name, n_context, evaluate(predictor, suite, n_context, n_test))]
    for k in ks:
        filtered = FilteredPredictor(predictor, PostHocFilter(kind=FilterKind.KNN, k=k))
        rows.append(MetricsRow.from_metrics(predictor.name, n_context, evaluate(filtered, suite, n_context, n_test), k=k))
    return rows


# ==================== Rosenbrock ====================

def rosenbrock(x) -> np.ndarray:
    """sum_i 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2, per row of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    head, nxt = x[..., :-1], x[..., 1:]
    return np.sum(100.0 * (nxt - head ** 2) ** 2 + (1.0 - head) ** 2, axis=-1)


def rosenbrock_reference(point: Sequence[float]) -> float:
    total = 0.0
    for i in range(len(point) - 1):
        a, b = float(point[i]), float(point[i + 1])
        total += 100.0 * (b - a * a) ** 2 + (1.0 - a) ** 2
    return total


def generate_rosenbrock_dataset(N: int, seed: int, dim: int = ROSENBROCK_DIM) -> SyntheticDataset:
    """Inputs uniform on [-1, 1]^dim mapped to the unit cube; outputs z-scored."""
    if N < 2:
        raise ContractError(f"N must be >= 2, got {N}")
    x = SeededRng(seed).uniform(-1.0, 1.0, size=(N, dim))
    y = rosenbrock(x)
    return SyntheticDataset((x + 1.0) / 2.0, (y - y.mean()) / y.std(), seed)


# ==================== Timing ====================

def _timed_steps(model: PFNModel, batch, steps: int, warmup: int) -> float:
    opt = AdamWState()
    for _ in range(warmup):
        train_step(model, opt, batch, 0.0)
    durations = []
    for _ in range(steps):
        started = time.perf_counter()
        train_step(model, opt, batch, 0.0)
        durations.append(time.perf_counter() - started)
    return statistics.median(durations)


def throughput_compare(
    base: ModelSpec,
    attentions: Sequence[AttentionSpec],
    n_context: int = 64,
    n_query: int = 16,
    batch_size: int = 4,
    steps: int = 20,
    warmup: int = 5,
    seed: int = 0,
) -> List[TimingRow]:
    """Median seconds per training step for each attention rule on identical shapes."""
    if steps < 20 or warmup < 5:
        raise ContractError(f"timing needs >= 20 steps after >= 5 warmup steps, got {steps} and {warmup}")
    rng = SeededRng(seed)
    n = n_context + n_query
    batch = []
    for b in range(batch_size):
        stream = rng.child(b)
        ds = SyntheticDataset(stream.uniform(size=(n, base.input_dim)), stream.normal(size=n), seed)
        batch.append(ds.split(n_context))

    rows = []
    for i, attention in enumerate(attentions):
        spec = ModelSpec.parse({**base.model_dump(), "attention": attention.model_dump()})
        model = build_model(spec, rng.child(1000 + i))
        seconds = _timed_steps(model, batch, steps, warmup)
        rows.append(TimingRow(f"{i}:{attention.kind.value}", attention.kind.value, spec.backbone.value, n_context, seconds))
        logger.info("%s %s @ %d context: %.4f s/step", spec.backbone.value, attention.kind.value, n_context, seconds)
    return rows


def scaling_timings(
    base: ModelSpec,
    attention: AttentionSpec,
    sizes: Sequence[int] = (64, 128, 256),
    **kwargs,
) -> List[TimingRow]:
    """Seconds per step of one attention rule across context lengths."""
    rows = []
    for n_context in sizes:
        rows.extend(throughput_compare(base, [attention], n_context=n_context, **kwargs))
    return rows


def linear_scaling_fit(sizes: Sequence[float], seconds: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares line through (size, seconds): slope, intercept and R^2."""
    if len(sizes) < 2 or len(sizes) != len(seconds):
        raise ContractError("scaling fit needs at least two (size, seconds) pairs")
    fit = stats.linregress(np.asarray(sizes, dtype=np.float64), np.asarray(seconds, dtype=np.float64))
    return float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
