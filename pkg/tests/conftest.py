"""
Shared fixtures: tiny configurations that train in well under a second.
"""
import numpy as np
import pytest

from dvapfn.config import get_settings
from dvapfn.models.datasets import SyntheticDataset
from dvapfn.numerics import SeededRng
from dvapfn.schemas import ModelSpec, PriorConfig, TrainConfig
from dvapfn.services.backbones import build_model
from dvapfn.services.bardist import uniform_buckets

TINY_MODEL = {
    "width": 4,
    "layers": 1,
    "heads": 1,
    "ffn_dim": 8,
    "bucket_count": 5,
    "attention": {"kind": "DVA", "d_k": 4, "heads": 1},
}

# --set flags that shrink the 1d preset to the tiny model above
TINY_OVERRIDES = [
    "epochs=2",
    "steps_per_epoch=1",
    "warmup_epochs=1",
    "batch_size=2",
    "val_datasets=2",
    "bucket_samples=50",
    "prior.points_per_dataset=6",
    "model.width=4",
    "model.heads=1",
    "model.ffn_dim=8",
    "model.bucket_count=5",
    "model.attention.d_k=4",
    "model.attention.heads=1",
]


@pytest.fixture(autouse=True)
def runs_dir(tmp_path, monkeypatch):
    """Point RUNS_DIR at a per-test directory."""
    target = tmp_path / "runs"
    monkeypatch.setenv("DVAPFN_RUNS_DIR", str(target))
    get_settings.cache_clear()
    yield target
    get_settings.cache_clear()


def tiny_spec(**overrides) -> ModelSpec:
    data = {**TINY_MODEL, **overrides}
    if "attention" in overrides:
        data["attention"] = {**TINY_MODEL["attention"], **overrides["attention"]}
    return ModelSpec.parse(data)


def tiny_model(seed: int = 0, **overrides):
    spec = tiny_spec(**overrides)
    return build_model(spec, SeededRng(seed), uniform_buckets(-1.0, 3.0, spec.bucket_count))


def random_dataset(n: int, d: int = 1, seed: int = 0) -> SyntheticDataset:
    rng = SeededRng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, d))
    return SyntheticDataset(X, np.sin(3.0 * X.sum(axis=1)) + 0.1 * rng.normal(n), seed)


@pytest.fixture
def tiny_prior() -> PriorConfig:
    return PriorConfig(input_dim=1, points_per_dataset=8)


@pytest.fixture
def tiny_train_config(tiny_prior) -> TrainConfig:
    return TrainConfig(
        epochs=2,
        steps_per_epoch=2,
        batch_size=2,
        warmup_epochs=1,
        val_datasets=2,
        bucket_samples=50,
        seed=11,
        prior=tiny_prior,
        model=tiny_spec(),
    )
