import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvapfn.errors import ContractError, TrainingDivergedError
from dvapfn.models.results import DETERMINISTIC_COLUMNS
from dvapfn.numerics import SeededRng, reduce_sum
from dvapfn.services import training
from dvapfn.services.training import (
    AdamWState,
    lr_schedule,
    split_context_query,
    train,
    train_step,
    training_batch,
    validate,
    validation_suite,
)
from tests.conftest import random_dataset, tiny_model


# ==================== Schedule ====================

def test_warmup_then_cosine(tiny_train_config):
    # 44 steps: warmup 0..10, cosine over 11..43
    cfg = tiny_train_config.model_copy(update={"epochs": 4, "steps_per_epoch": 11, "warmup_epochs": 1, "lr": 1e-3})
    assert lr_schedule(0, cfg) == 0.0
    assert lr_schedule(5, cfg) == pytest.approx(1e-3 * 5 / 11)
    assert lr_schedule(11, cfg) == pytest.approx(1e-3)
    assert lr_schedule(27, cfg) == pytest.approx(5e-4, abs=1e-12)
    with pytest.raises(ContractError):
        lr_schedule(-1, cfg)


def test_last_training_step_has_zero_lr(tiny_train_config):
    cfg = tiny_train_config.model_copy(update={"epochs": 3, "steps_per_epoch": 5, "warmup_epochs": 1, "lr": 1e-2})
    last = cfg.total_steps - 1
    assert lr_schedule(last, cfg) == pytest.approx(0.0, abs=1e-18)
    assert lr_schedule(last - 1, cfg) > 0.0
    assert lr_schedule(last + 3, cfg) == pytest.approx(0.0, abs=1e-18)


# ==================== Optimizer ====================

def test_adamw_solves_a_quadratic():
    target = np.array([1.0, -2.0, 3.0])
    params = {"w": np.zeros(3)}
    opt = AdamWState(grad_clip=None)
    for k in range(3000):
        opt.step(params, {"w": 2.0 * (params["w"] - target)}, 0.1 * 0.998 ** k)
    np.testing.assert_allclose(params["w"], target, atol=1e-2)


def test_adamw_constant_lr_converges_on_quadratic():
    params = {"w": np.zeros(3)}
    opt = AdamWState(grad_clip=None)
    for _ in range(2000):
        opt.step(params, {"w": 2.0 * (params["w"] - 3.0)}, 1e-2)
    assert np.max(np.abs(params["w"] - 3.0)) < 1e-3


def test_first_adam_step_has_length_lr():
    params = {"w": np.zeros(2)}
    AdamWState(grad_clip=None).step(params, {"w": np.array([-4.0, 0.5])}, 0.01)
    np.testing.assert_allclose(params["w"], [0.01, -0.01], rtol=1e-6)


def test_zero_learning_rate_leaves_parameters():
    params = {"w": np.array([1.0, 2.0])}
    AdamWState(weight_decay=0.3).step(params, {"w": np.array([5.0, -1.0])}, 0.0)
    np.testing.assert_array_equal(params["w"], [1.0, 2.0])


def test_decoupled_weight_decay():
    params = {"w": np.array([2.0, -4.0])}
    AdamWState(weight_decay=0.5).step(params, {"w": np.zeros(2)}, 0.1)
    np.testing.assert_allclose(params["w"], [1.9, -3.8], rtol=1e-14)


def test_clipping_reports_when_it_fires():
    opt = AdamWState(grad_clip=1.0)
    assert opt.step({"w": np.zeros(2)}, {"w": np.array([6.0, 8.0])}, 0.1)
    assert not opt.step({"w": np.zeros(2)}, {"w": np.array([0.6, 0.0])}, 0.1)


# ==================== Data ====================

@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_split_cutoff_in_range(n, seed):
    context, query = split_context_query(random_dataset(n), SeededRng(seed))
    assert 1 <= context.n_points <= n - 1
    assert context.n_points + query.n_points == n


def test_split_needs_two_points():
    with pytest.raises(ContractError):
        split_context_query(random_dataset(1), SeededRng(0))


def test_training_batch_is_reproducible(tiny_train_config):
    batch, seeds = training_batch(tiny_train_config, 3)
    again, seeds_again = training_batch(tiny_train_config, 3)
    assert seeds == seeds_again and len(set(seeds)) == len(seeds)
    for (c1, q1), (c2, q2) in zip(batch, again):
        np.testing.assert_array_equal(c1.y, c2.y)
        np.testing.assert_array_equal(q1.X, q2.X)
    _, other = training_batch(tiny_train_config, 4)
    assert not set(other) & set(seeds)


# ==================== Steps ====================

def test_train_step_changes_parameters(tiny_train_config):
    model = tiny_model()
    before = {k: v.copy() for k, v in model.params.items()}
    batch, seeds = training_batch(tiny_train_config, 0)
    result = train_step(model, AdamWState(), batch, 1e-2, 0, seeds)
    assert math.isfinite(result.loss)
    assert result.n_queries == sum(q.n_points for _, q in batch)
    assert any(not np.array_equal(before[k], model.params[k]) for k in before)


def test_train_step_reports_divergence(tiny_train_config, monkeypatch):
    def nan_loss(model, batch, params):
        return reduce_sum(params["head.b"]) * float("nan"), 1

    monkeypatch.setattr(training, "batch_loss", nan_loss)
    model = tiny_model()
    batch, seeds = training_batch(tiny_train_config, 7)
    with pytest.raises(TrainingDivergedError) as info:
        train_step(model, AdamWState(), batch, 1e-3, 7, seeds)
    assert info.value.step == 7
    assert info.value.batch_seeds == seeds


def test_empty_batch_rejected():
    with pytest.raises(ContractError):
        train_step(tiny_model(), AdamWState(), [], 1e-3)


def test_validate_is_finite(tiny_train_config):
    suite = validation_suite(tiny_train_config.prior, 0, 3)
    assert math.isfinite(validate(tiny_model(), suite))


# ==================== Loop ====================

def test_training_is_reproducible(tiny_train_config):
    model_a, log_a = train(tiny_train_config)
    model_b, log_b = train(tiny_train_config)
    pd.testing.assert_frame_equal(log_a.to_frame()[DETERMINISTIC_COLUMNS], log_b.to_frame()[DETERMINISTIC_COLUMNS])
    for name in model_a.params:
        np.testing.assert_array_equal(model_a.params[name], model_b.params[name])
    assert model_a.buckets == model_b.buckets


def test_training_log_shape(tiny_train_config):
    model, log = train(tiny_train_config)
    frame = log.to_frame()
    assert len(frame) == tiny_train_config.epochs + 1
    assert math.isnan(frame.loc[0, "train_nll"])
    assert frame["step"].tolist() == [0, 2, 4]
    assert model.metadata["best_val_nll"] == pytest.approx(log.best_val_nll)
