import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvapfn.errors import ContractError
from dvapfn.models.datasets import SyntheticDataset
from dvapfn.models.enums import AttentionKind
from dvapfn.numerics import SeededRng
from dvapfn.schemas import AttentionSpec
from dvapfn.services.attention import (
    dot_product_logits,
    dva_forward,
    far_mass,
    head_averaged,
    init_attention_params,
    kernel_attention_forward,
    linear_attention_forward,
    locality_profile,
    locality_spearman,
    mahalanobis_logit_oracle,
    va_forward,
)
from dvapfn.services.backbones import forward, forward_with_weights
from tests.conftest import random_dataset, tiny_model


def _params(kind=AttentionKind.DVA, width=4, d_k=4, seed=0, tie_qk=False):
    spec = AttentionSpec(kind=kind, d_k=d_k, tie_qk=tie_qk)
    return init_attention_params(spec, width, width, SeededRng(seed))


# ==================== Label invariance ====================

def test_dva_weights_ignore_context_targets():
    rng = SeededRng(1)
    ctx_x, query_x = rng.normal((6, 4)), rng.normal((3, 4))
    params = _params()
    _, before = dva_forward(ctx_x, rng.normal((6, 4)), query_x, params)
    _, after = dva_forward(ctx_x, rng.normal((6, 4)), query_x, params)
    np.testing.assert_array_equal(before, after)


def test_va_weights_follow_context_targets():
    rng = SeededRng(2)
    ctx_x, query = rng.normal((6, 4)), rng.normal((3, 4))
    params = _params(AttentionKind.VA)
    _, before = va_forward(ctx_x + rng.normal((6, 4)), query, params)
    _, after = va_forward(ctx_x + rng.normal((6, 4)), query, params)
    assert not np.array_equal(before, after)


@pytest.mark.parametrize("kind", ["DVA", "KernelRBF", "LinearDVA"])
@pytest.mark.parametrize("backbone", ["transformer", "cnn"])
def test_decoupled_model_weights_are_label_free(kind, backbone):
    model = tiny_model(seed=4, backbone=backbone, layers=2, attention={"kind": kind})
    ds = random_dataset(10, seed=5)
    context, query = ds.split(7)
    relabeled = SyntheticDataset(context.X, context.y[::-1] * 3.0 + 1.0, 0)
    _, first = forward_with_weights(model, context, query.X)
    _, second = forward_with_weights(model, relabeled, query.X)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind", ["VA", "LinearVA"])
def test_coupled_model_weights_depend_on_labels(kind):
    model = tiny_model(seed=4, attention={"kind": kind})
    ds = random_dataset(10, seed=5)
    context, query = ds.split(7)
    relabeled = SyntheticDataset(context.X, context.y + 2.0, 0)
    _, first = forward_with_weights(model, context, query.X)
    _, second = forward_with_weights(model, relabeled, query.X)
    assert not np.array_equal(first[0], second[0])


def test_weight_rows_are_distributions():
    model = tiny_model(seed=6, heads=2, attention={"heads": 2})
    ds = random_dataset(9, seed=1)
    context, query = ds.split(6)
    _, captured = forward_with_weights(model, context, query.X)
    assert captured[0].shape == (2, 3, 6)
    np.testing.assert_allclose(captured[0].sum(axis=-1), 1.0, atol=1e-12)


def test_transformer_predictions_ignore_context_order():
    model = tiny_model(seed=8)
    ds = random_dataset(12, seed=2)
    context, query = ds.split(8)
    perm = SeededRng(3).permutation(8)
    shuffled = context.take(perm)
    np.testing.assert_allclose(
        forward(model, context, query.X).numpy(),
        forward(model, shuffled, query.X).numpy(),
        atol=1e-10,
    )


# ==================== Other rules ====================

def test_kernel_attention_prefers_nearby_points():
    eye = np.eye(1)
    params = {"W_q": eye, "W_k": eye, "W_v": eye, "log_gamma": np.array([0.0])}
    ctx = np.array([[0.0], [0.5], [1.0], [2.0]])
    _, weights = kernel_attention_forward(ctx, np.ones((4, 1)), np.array([[0.0]]), params)
    assert np.all(np.diff(weights[0, 0]) < 0)


def test_linear_attention_matches_its_implied_weights():
    rng = SeededRng(4)
    ctx_x, ctx_y, query = rng.normal((5, 4)), rng.normal((5, 4)), rng.normal((2, 4))
    params = _params(AttentionKind.LINEAR_DVA)
    H, weights = linear_attention_forward("LinearDVA", ctx_x, ctx_y, query, params, capture=True)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(H.numpy(), weights[0] @ (ctx_y @ params["W_v"]), atol=1e-12)
    _, none = linear_attention_forward("LinearDVA", ctx_x, ctx_y, query, params)
    assert none is None


def test_linear_attention_rejects_softmax_kinds():
    with pytest.raises(ContractError):
        linear_attention_forward("DVA", np.ones((2, 4)), np.ones((2, 4)), np.ones((1, 4)), _params())


def test_empty_context_rejected():
    with pytest.raises(ContractError):
        dva_forward(np.zeros((0, 4)), np.zeros((0, 4)), np.ones((1, 4)), _params())


def test_tied_layer_stores_one_projection():
    params = _params(tie_qk=True)
    assert "W_k" not in params and "W_q" in params


# ==================== Metric identity ====================

@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 32), st.integers(0, 10_000))
def test_tied_projection_logits_equal_metric_form(d, d_k, n, seed):
    rng = SeededRng(seed)
    W = rng.normal((d, d_k))
    x_star, X_ctx = rng.normal(d), rng.normal((n, d))
    tau = np.sqrt(d_k)
    np.testing.assert_allclose(
        dot_product_logits(W, W, x_star, X_ctx, tau),
        mahalanobis_logit_oracle(W, W, x_star, X_ctx, tau),
        rtol=0,
        atol=1e-10,
    )


def test_metric_oracle_rejects_asymmetric_metric():
    rng = SeededRng(0)
    with pytest.raises(ContractError):
        mahalanobis_logit_oracle(rng.normal((3, 3)), rng.normal((3, 3)), np.zeros(3), np.ones((2, 3)), 1.0)


# ==================== Locality ====================

def test_far_mass():
    weights = np.array([[0.25, 0.75]])
    assert far_mass(weights, np.array([[0.0], [1.0]]), np.array([[0.0]]), 0.5) == pytest.approx([0.75])
    with pytest.raises(ContractError):
        far_mass(weights, np.array([[0.0], [1.0]]), np.array([[0.0]]), 0.0)


def test_locality_profile_covers_every_pair():
    model = tiny_model(seed=2, heads=2, attention={"heads": 2})
    profile = locality_profile(model, random_dataset(10, seed=3), layer=1, n_context=6)
    assert len(profile.weights) == 2 * 4 * 6
    distances, weights = head_averaged(profile)
    assert distances.shape == weights.shape == (24,)
    assert -1.0 <= locality_spearman(profile) <= 1.0


def test_locality_profile_layer_range():
    with pytest.raises(ContractError):
        locality_profile(tiny_model(), random_dataset(6), layer=2)


# ==================== Limits and symmetries ====================

def _kernel_params(d=2, gamma=1.0):
    eye = np.eye(d)
    return {"W_q": eye, "W_k": eye, "W_v": eye, "log_gamma": np.array([np.log(gamma)])}


def test_kernel_weights_unchanged_by_rotation():
    rng = SeededRng(7)
    ctx, query, values = rng.normal((6, 2)), rng.normal((3, 2)), rng.normal((6, 2))
    angle = 0.7
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    params = _kernel_params()
    _, plain = kernel_attention_forward(ctx, values, query, params)
    _, rotated = kernel_attention_forward(ctx @ rotation, values, query @ rotation, params)
    np.testing.assert_allclose(rotated, plain, rtol=0, atol=1e-12)


def test_large_gamma_picks_the_coincident_point():
    ctx = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [2.0, 1.0]])
    _, weights = kernel_attention_forward(ctx, np.ones((4, 2)), ctx[1:2], _kernel_params(gamma=100.0))
    np.testing.assert_allclose(weights[0, 0], [0.0, 1.0, 0.0, 0.0], rtol=0, atol=1e-9)


def test_vanishing_gamma_gives_uniform_weights():
    ctx = SeededRng(8).normal((5, 2))
    _, weights = kernel_attention_forward(ctx, np.ones((5, 2)), np.zeros((2, 2)), _kernel_params(gamma=1e-12))
    np.testing.assert_allclose(weights, 0.2, rtol=0, atol=1e-9)


def test_va_with_zero_query_map_is_uniform():
    rng = SeededRng(9)
    params = _params(AttentionKind.VA)
    params["W_q"] = np.zeros_like(params["W_q"])
    _, weights = va_forward(rng.normal((5, 4)), rng.normal((3, 4)), params)
    np.testing.assert_array_equal(weights, np.full((1, 3, 5), 0.2))


@pytest.mark.parametrize("rule", [dva_forward, kernel_attention_forward])
def test_single_context_point_gets_all_weight(rule):
    rng = SeededRng(10)
    params = _params(AttentionKind.KERNEL_RBF)
    ctx_y = rng.normal((1, 4))
    H, weights = rule(rng.normal((1, 4)), ctx_y, rng.normal((3, 4)), params)
    np.testing.assert_array_equal(weights, np.ones((1, 3, 1)))
    np.testing.assert_allclose(H.numpy(), np.repeat(ctx_y @ params["W_v"], 3, axis=0), rtol=0, atol=1e-15)


def test_va_single_context_point_gets_all_weight():
    rng = SeededRng(11)
    _, weights = va_forward(rng.normal((1, 4)), rng.normal((2, 4)), _params(AttentionKind.VA))
    np.testing.assert_array_equal(weights, np.ones((1, 2, 1)))
