import numpy as np
import pytest

from dvapfn.errors import ConfigError, ContractError
from dvapfn.models.datasets import SyntheticDataset
from dvapfn.models.results import Metrics
from dvapfn.numerics import SeededRng
from dvapfn.schemas import AttentionSpec, GPHyper, PostHocFilter, PriorConfig
from dvapfn.services.evaluation import (
    FilteredPredictor,
    GPPredictor,
    PFNPredictor,
    apply_posthoc_filter,
    coverage,
    evaluate,
    filter_indices,
    generate_rosenbrock_dataset,
    k_sensitivity,
    linear_scaling_fit,
    rosenbrock,
    rosenbrock_reference,
    sweep_context,
    throughput_compare,
)
from dvapfn.services.priors import sample_dataset
from tests.conftest import random_dataset, tiny_model, tiny_spec

HYPER = GPHyper(lengthscales=[0.6], signal_variance=0.01, noise_variance=1e-4)


class SumOracle:
    """Knows y = sum(x) exactly."""
    name = "oracle"

    def predict(self, context, query_x):
        return query_x.sum(axis=1), np.ones(query_x.shape[0])


class StandardNormal:
    name = "normal"

    def predict(self, context, query_x):
        return np.zeros(query_x.shape[0]), np.ones(query_x.shape[0])


def _sum_suite(n_datasets=4, n=12):
    suite = []
    for k in range(n_datasets):
        X = SeededRng(k).uniform(size=(n, 2))
        suite.append(SyntheticDataset(X, X.sum(axis=1), k))
    return suite


def _prior_suite(n_datasets=16, n=50):
    cfg = PriorConfig(points_per_dataset=n, noise_variance=1e-4)
    return [sample_dataset(cfg, 100 + k) for k in range(n_datasets)]


# ==================== Metrics ====================

def test_perfect_predictor_has_zero_error():
    metrics = evaluate(SumOracle(), _sum_suite(), n_context=5, n_test=7)
    assert (metrics.mse, metrics.mae, metrics.max_err) == (0.0, 0.0, 0.0)
    assert metrics.n_test == 4 * 7


def test_metrics_match_explicit_loops():
    errors = SeededRng(0).normal(500)
    metrics = Metrics.from_errors(errors)
    squares = sum(e * e for e in errors) / len(errors)
    absolutes = sum(abs(e) for e in errors) / len(errors)
    assert metrics.mse == pytest.approx(squares, rel=1e-12)
    assert metrics.mae == pytest.approx(absolutes, rel=1e-12)
    assert metrics.max_err == max(abs(e) for e in errors)


def test_evaluation_is_repeatable():
    suite = _prior_suite(4, 20)
    first = evaluate(GPPredictor(HYPER), suite, 10, 10)
    second = evaluate(GPPredictor(HYPER), suite, 10, 10)
    assert (first.mse, first.mae, first.max_err) == (second.mse, second.mae, second.max_err)


def test_short_datasets_rejected():
    with pytest.raises(ContractError):
        evaluate(SumOracle(), _sum_suite(n=6), n_context=5, n_test=2)
    with pytest.raises(ContractError):
        evaluate(SumOracle(), [], n_context=5, n_test=2)


def test_more_context_helps_the_gp():
    rows = sweep_context(GPPredictor(HYPER), _prior_suite(), [2, 40], n_test=10)
    assert [r.n_context for r in rows] == [2, 40]
    assert rows[1].mse < rows[0].mse


def test_sweep_sizes_must_ascend():
    with pytest.raises(ContractError):
        sweep_context(SumOracle(), _sum_suite(), [6, 3])


def test_fitted_gp_predicts_something_sensible():
    suite = _prior_suite(4, 40)
    metrics = evaluate(GPPredictor(), suite, 30, 10)
    assert metrics.mse < 0.01


# ==================== Calibration ====================

def test_coverage_of_a_calibrated_gaussian():
    suite = []
    for k in range(20):
        rng = SeededRng(k)
        suite.append(SyntheticDataset(rng.uniform(size=(110, 1)), rng.normal(110), k))
    report = coverage(StandardNormal(), suite, n_context=10, n_test=100)
    assert report.n_test == 2000
    assert report.within_0_1_sigma == pytest.approx(0.0797, abs=0.03)
    assert report.within_1_sigma == pytest.approx(0.6827, abs=0.05)
    assert report.within_2_sigma == pytest.approx(0.9545, abs=0.03)
    assert report.fractions == sorted(report.fractions)


# ==================== Post-hoc filters ====================

def _context(values):
    X = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    return SyntheticDataset(X, np.arange(len(values), dtype=np.float64), 0)


def test_knn_keeps_nearest_in_original_order():
    ctx = _context([0.9, 0.1, 0.5, 0.45])
    kept = filter_indices(ctx, [0.4], PostHocFilter(kind="knn", k=2))
    np.testing.assert_array_equal(kept, [2, 3])
    np.testing.assert_array_equal(apply_posthoc_filter(ctx, [0.4], PostHocFilter(kind="knn", k=2)).y, [2.0, 3.0])


def test_knn_ties_go_to_lower_index():
    kept = filter_indices(_context([0.25, 0.75]), [0.5], PostHocFilter(kind="knn", k=1))
    np.testing.assert_array_equal(kept, [0])


def test_knn_larger_than_context():
    with pytest.raises(ContractError):
        filter_indices(_context([0.1, 0.2]), [0.0], PostHocFilter(kind="knn", k=3))


def test_exponential_filter_keeps_above_median():
    kept = filter_indices(_context([0.0, 0.1, 0.5, 1.0]), [0.0], PostHocFilter(kind="exponential", gamma=1.0))
    np.testing.assert_array_equal(kept, [0, 1])


def test_exponential_filter_falls_back_to_nearest():
    kept = filter_indices(_context([0.3, 0.3, 0.3]), [0.0], PostHocFilter(kind="exponential", gamma=2.0))
    np.testing.assert_array_equal(kept, [0])


def test_filter_needs_its_parameter():
    with pytest.raises(ConfigError):
        PostHocFilter(kind="knn")
    with pytest.raises(ConfigError):
        PostHocFilter(kind="exponential")


@pytest.mark.parametrize("make", [lambda: GPPredictor(HYPER), lambda: PFNPredictor(tiny_model(seed=2))])
def test_keeping_every_point_changes_nothing(make):
    base = make()
    ds = random_dataset(15, seed=4)
    context, query = ds.split(10)
    filtered = FilteredPredictor(base, PostHocFilter(kind="knn", k=10))
    for a, b in zip(base.predict(context, query.X), filtered.predict(context, query.X)):
        np.testing.assert_array_equal(a, b)


def test_k_sensitivity_rows():
    rows = k_sensitivity(GPPredictor(HYPER), _prior_suite(3, 20), 10, [2, 5], n_test=5)
    assert [r.k for r in rows] == [0, 2, 5]
    assert all(r.n_test == 15 for r in rows)


# ==================== Rosenbrock ====================

def test_rosenbrock_known_values():
    assert rosenbrock(np.ones(5)) == 0.0
    assert rosenbrock(np.zeros(5)) == 4.0


def test_rosenbrock_matches_scalar_loop():
    points = SeededRng(7).uniform(-1.0, 1.0, size=(1000, 5))
    expected = np.array([rosenbrock_reference(p) for p in points])
    np.testing.assert_allclose(rosenbrock(points), expected, rtol=1e-13)


def test_rosenbrock_dataset():
    ds = generate_rosenbrock_dataset(200, seed=3)
    assert ds.X.shape == (200, 5)
    assert ds.X.min() >= 0.0 and ds.X.max() <= 1.0
    assert ds.y.mean() == pytest.approx(0.0, abs=1e-12)
    assert ds.y.std() == pytest.approx(1.0)
    with pytest.raises(ContractError):
        generate_rosenbrock_dataset(1, seed=0)


# ==================== Timing ====================

def test_linear_scaling_fit_recovers_a_line():
    slope, intercept, r2 = linear_scaling_fit([64, 128, 256], [0.074, 0.138, 0.266])
    assert slope == pytest.approx(0.001)
    assert intercept == pytest.approx(0.01)
    assert r2 == pytest.approx(1.0)
    with pytest.raises(ContractError):
        linear_scaling_fit([64], [0.1])


def test_throughput_compare_needs_enough_steps():
    with pytest.raises(ContractError):
        throughput_compare(tiny_spec(), [AttentionSpec(d_k=4)], steps=10)


def test_throughput_compare_times_each_rule():
    attentions = [AttentionSpec(kind="DVA", d_k=4), AttentionSpec(kind="VA", d_k=4)]
    rows = throughput_compare(tiny_spec(), attentions, n_context=8, n_query=2, batch_size=1)
    assert [r.attention for r in rows] == ["DVA", "VA"]
    assert all(r.seconds_per_step > 0 and r.n_context == 8 for r in rows)
