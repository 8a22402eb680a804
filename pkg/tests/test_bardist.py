import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvapfn.errors import ConfigError, ContractError
from dvapfn.numerics import SeededRng, Tape
from dvapfn.services.bardist import (
    BarDistribution,
    BucketSpec,
    bucket_index,
    build_buckets,
    cdf,
    interval_probability,
    mean,
    nll,
    nll_sum_tape,
    quantile,
    uniform_buckets,
    uniform_nll,
    variance,
)


def _one_hot(B, b, strength=60.0):
    logits = np.zeros(B)
    logits[b] = strength
    return logits


@given(
    st.lists(st.sampled_from([0.0, 0.5, 1.0, 2.0]) | st.floats(-5, 5), min_size=40, max_size=200),
    st.integers(1, 4),
)
def test_edges_strictly_increasing_even_with_ties(samples, B):
    spec = build_buckets(samples, B)
    assert spec.B == B
    assert np.all(np.diff(spec.edges) > 0)


def test_quantile_edges_split_samples_evenly():
    samples = SeededRng(0).normal(10_000)
    spec = build_buckets(samples, 10)
    counts = np.bincount(bucket_index(spec, samples), minlength=10)
    assert counts.min() >= 990 and counts.max() <= 1010


def test_too_few_samples():
    with pytest.raises(ConfigError):
        build_buckets(np.arange(49.0), 5)


def test_edges_must_increase():
    with pytest.raises(ContractError):
        BucketSpec(np.array([0.0, 1.0, 1.0]))


def test_targets_outside_support_clamp_to_edge_buckets():
    spec = uniform_buckets(0.0, 1.0, 4)
    np.testing.assert_array_equal(bucket_index(spec, [-3.0, 0.0, 0.3, 1.0, 7.0]), [0, 0, 1, 3, 3])


def test_uniform_logits_density_nll():
    spec = uniform_buckets(0.0, 2.0, 4)
    # density 1/2 everywhere on the support
    assert uniform_nll(spec, [0.1, 1.9]) == pytest.approx([np.log(2.0)] * 2)


def test_one_hot_moments():
    spec = uniform_buckets(0.0, 1.0, 4)
    dist = BarDistribution(_one_hot(4, 2), spec)
    assert mean(dist) == pytest.approx(0.625)
    assert variance(dist) == pytest.approx(0.25 ** 2 / 12.0)


def test_cdf_endpoints_and_monotonicity():
    spec = uniform_buckets(-1.0, 1.0, 8)
    dist = BarDistribution(SeededRng(1).normal(8), spec)
    assert cdf(dist, -1.0) == 0.0
    assert cdf(dist, 1.0) == pytest.approx(1.0)
    grid = np.linspace(-1.5, 1.5, 61)
    assert np.all(np.diff([cdf(dist, y) for y in grid]) >= 0)


def test_quantile_inverts_cdf():
    spec = uniform_buckets(0.0, 1.0, 5)
    dist = BarDistribution(SeededRng(2).normal(5), spec)
    for q in (0.1, 0.5, 0.9):
        assert cdf(dist, quantile(dist, q)) == pytest.approx(q, abs=1e-12)


def test_uniform_median():
    dist = BarDistribution(np.zeros(4), uniform_buckets(0.0, 1.0, 4))
    assert quantile(dist, 0.5) == pytest.approx(0.5)


@pytest.mark.parametrize("q", [0.0, 1.0, -0.2])
def test_quantile_level_must_be_open_unit(q):
    dist = BarDistribution(np.zeros(3), uniform_buckets(0.0, 1.0, 3))
    with pytest.raises(ContractError):
        quantile(dist, q)


def test_interval_probability():
    dist = BarDistribution(np.zeros(4), uniform_buckets(0.0, 1.0, 4))
    assert interval_probability(dist, 0.25, 0.75) == pytest.approx(0.5)
    with pytest.raises(ContractError):
        interval_probability(dist, 0.6, 0.4)


def test_batched_read_outs():
    spec = uniform_buckets(0.0, 1.0, 3)
    logits = SeededRng(3).normal((5, 3))
    dist = BarDistribution(logits, spec)
    assert mean(dist).shape == (5,)
    for i in range(5):
        row = BarDistribution(logits[i], spec)
        assert mean(dist)[i] == pytest.approx(mean(row))
        assert variance(dist)[i] == pytest.approx(variance(row))


def test_logit_count_must_match_buckets():
    with pytest.raises(ContractError):
        BarDistribution(np.zeros(3), uniform_buckets(0.0, 1.0, 4))


def test_tape_loss_matches_read_out_nll():
    spec = uniform_buckets(-1.0, 1.0, 6)
    logits = SeededRng(4).normal((4, 6))
    y = np.array([-0.9, 0.0, 0.33, 5.0])
    tape = Tape()
    loss = nll_sum_tape(tape.watch(logits, "logits"), spec, y)
    assert loss.item() == pytest.approx(float(np.sum(nll(BarDistribution(logits, spec), y))), rel=1e-12)
    grads = tape.backward(loss)
    # softmax gradient rows sum to zero
    np.testing.assert_allclose(grads["logits"].sum(axis=1), 0.0, atol=1e-12)


# ==================== Density properties ====================

# Unequal widths so the density convention matters.
UNEVEN = BucketSpec(np.array([-1.0, -0.6, -0.5, 0.0, 0.2, 0.9, 2.0]))

row_logits = st.lists(st.floats(-20, 20), min_size=UNEVEN.B, max_size=UNEVEN.B).map(np.array)
# every bucket keeps visible mass, so the inverse CDF has no near-vertical steps
moderate_logits = st.lists(st.floats(-5, 5), min_size=UNEVEN.B, max_size=UNEVEN.B).map(np.array)


@given(row_logits)
def test_density_integrates_to_one(logits):
    dist = BarDistribution(logits, UNEVEN)
    density = np.exp(-np.array([nll(dist, y) for y in UNEVEN.midpoints]))
    assert float(np.sum(density * UNEVEN.widths)) == pytest.approx(1.0, abs=1e-6)


@given(moderate_logits, st.floats(-100, 100), st.floats(0.01, 0.99))
def test_mean_and_quantile_ignore_logit_shift(logits, shift, q):
    dist, shifted = BarDistribution(logits, UNEVEN), BarDistribution(logits + shift, UNEVEN)
    assert mean(shifted) == pytest.approx(mean(dist), rel=1e-9, abs=1e-9)
    assert quantile(shifted, q) == pytest.approx(quantile(dist, q), rel=1e-9, abs=1e-9)


@given(moderate_logits, st.integers(0, UNEVEN.B - 1))
def test_nll_drops_when_mass_moves_to_target_bucket(logits, b):
    y = UNEVEN.midpoints[b]
    before = nll(BarDistribution(logits, UNEVEN), y)
    nudged = logits.copy()
    nudged[b] += 0.5
    assert nll(BarDistribution(nudged, UNEVEN), y) < before


@settings(max_examples=30)
@given(row_logits)
def test_quantile_nondecreasing_in_level(logits):
    dist = BarDistribution(logits, UNEVEN)
    levels = np.linspace(0.01, 0.99, 50)
    assert np.all(np.diff([quantile(dist, q) for q in levels]) >= 0)


def test_confident_bucket_density_is_inverse_width():
    spec = uniform_buckets(0.0, 1.0, 4)
    dist = BarDistribution(_one_hot(4, 2, strength=40.0), spec)
    assert nll(dist, 0.6) == pytest.approx(-np.log(4.0), abs=1e-9)
    assert nll(BarDistribution(np.zeros(4), spec), 0.6) == pytest.approx(0.0, abs=1e-12)


def test_mean_matches_sampled_midpoints():
    spec = uniform_buckets(0.0, 1.0, 10)
    dist = BarDistribution(SeededRng(5).normal(10), spec)
    cum = np.cumsum(dist.probs)
    draws = np.minimum(np.searchsorted(cum, SeededRng(6).uniform(size=1_000_000), side="right"), spec.B - 1)
    assert float(np.mean(spec.midpoints[draws])) == pytest.approx(mean(dist), abs=1e-3)
