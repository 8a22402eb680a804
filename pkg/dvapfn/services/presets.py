"""
Experiment Presets - prior, architecture and optimization settings per task.

Rows cover the 1D/2D/5D/10D synthetic tasks and the 64-input power-flow
surrogate. ``DESK_OVERRIDES`` shrink each row to something a laptop core
trains in minutes; the acceptance runner uses those.
"""
import copy
from typing import Any, Dict, List, Optional

from dvapfn.errors import ConfigError
from dvapfn.schemas import TrainConfig


# Prior rows: dataset size, kernel lengthscale and variance, noise, output shift
PRIOR_TEMPLATES = {
    "1d": {
        "input_dim": 1,
        "points_per_dataset": 100,
        "kernel": {"kind": "rbf_fixed", "lengthscale": 0.6, "signal_variance": 0.01},
        "noise_variance": 1e-2,
        "output_shift": 1.0,
        "input_normalization": "uniform01",
    },
    "2d": {
        "input_dim": 2,
        "points_per_dataset": 100,
        "kernel": {"kind": "rbf_fixed", "lengthscale": 0.6, "signal_variance": 0.01},
        "noise_variance": 1e-2,
        "output_shift": 1.0,
        "input_normalization": "uniform01",
    },
    "5d": {
        "input_dim": 5,
        "points_per_dataset": 400,
        "kernel": {"kind": "rbf_fixed", "lengthscale": 0.6, "signal_variance": 0.001},
        "noise_variance": 1e-4,
        "output_shift": 1.0,
        "input_normalization": "uniform01",
    },
    "10d": {
        "input_dim": 10,
        "points_per_dataset": 500,
        "kernel": {"kind": "rbf_fixed", "lengthscale": 0.6, "signal_variance": 0.01},
        "noise_variance": 1e-4,
        "output_shift": 1.0,
        "input_normalization": "uniform01",
    },
    "power": {
        "input_dim": 64,
        "points_per_dataset": 500,
        "kernel": {"kind": "rbf_fixed", "lengthscale": 215.0, "signal_variance": 1e-4},
        "noise_variance": 1e-4,
        "output_shift_range": (0.9, 1.1),
        "input_normalization": "zscore",
    },
}

TRANSFORMER_TEMPLATES = {
    "1d": {"width": 128, "layers": 1, "heads": 4, "ffn_dim": 512},
    "2d": {"width": 128, "layers": 1, "heads": 4, "ffn_dim": 512},
    "5d": {"width": 64, "layers": 2, "heads": 8, "ffn_dim": 1024},
    "10d": {"width": 32, "layers": 2, "heads": 8, "ffn_dim": 1024},
    "power": {"width": 64, "layers": 4, "heads": 8, "ffn_dim": 1024},
}

CNN_TEMPLATES = {
    "1d": {"width": 32, "layers": 1, "kernel_size": 5},
    "2d": {"width": 32, "layers": 1, "kernel_size": 5},
    "5d": {"width": 32, "layers": 4, "kernel_size": 5},
    "10d": {"width": 32, "layers": 4, "kernel_size": 5},
    "power": {"width": 32, "layers": 4, "kernel_size": 5},
}

OPTIMIZATION_TEMPLATES = {
    "1d": {"epochs": 100, "steps_per_epoch": 500, "batch_size": 16, "lr": 1e-3, "warmup_epochs": 25},
    "2d": {"epochs": 100, "steps_per_epoch": 500, "batch_size": 16, "lr": 1e-3, "warmup_epochs": 25},
    "5d": {"epochs": 200, "steps_per_epoch": 500, "batch_size": 32, "lr": 1e-3, "warmup_epochs": 50},
    "10d": {"epochs": 200, "steps_per_epoch": 500, "batch_size": 16, "lr": 1e-3, "warmup_epochs": 50},
    "power": {"epochs": 200, "steps_per_epoch": 500, "batch_size": 32, "lr": 1e-3, "warmup_epochs": 50},
}

BUCKET_COUNTS = {"1d": 100, "2d": 100, "5d": 500, "10d": 500, "power": 500}

# Laptop-scale reductions, applied on top of the full rows
DESK_OVERRIDES = {
    "1d": {
        "epochs": 40, "steps_per_epoch": 500, "batch_size": 8, "warmup_epochs": 4,
        "bucket_samples": 20_000, "model": {"width": 32, "heads": 2, "ffn_dim": 64},
    },
    "2d": {
        "epochs": 40, "steps_per_epoch": 500, "batch_size": 8, "warmup_epochs": 4,
        "bucket_samples": 20_000, "model": {"width": 32, "heads": 2, "ffn_dim": 64},
    },
    "5d": {
        "epochs": 30, "steps_per_epoch": 500, "batch_size": 8, "warmup_epochs": 3,
        "bucket_samples": 20_000,
        "prior": {"points_per_dataset": 100},
        "model": {"width": 32, "heads": 2, "ffn_dim": 64, "bucket_count": 100},
    },
    "10d": {
        "epochs": 30, "steps_per_epoch": 500, "batch_size": 8, "warmup_epochs": 3,
        "bucket_samples": 20_000,
        "prior": {"points_per_dataset": 100},
        "model": {"width": 32, "heads": 2, "ffn_dim": 64, "bucket_count": 100},
    },
    # 12-bus feeder: 11 active + 11 reactive loads
    "power": {
        "epochs": 30, "steps_per_epoch": 500, "batch_size": 4, "warmup_epochs": 3,
        "bucket_samples": 20_000,
        "prior": {"input_dim": 22, "points_per_dataset": 600},
        "model": {"input_dim": 22, "width": 32, "layers": 2, "heads": 2, "ffn_dim": 64, "bucket_count": 100},
    },
}

# Sweep values for ``ablate``
ABLATION_VALUES = {
    "phi_x": ["linear", "mlp2", "broadcast"],
    "phi_y": ["linear", "mlp2", "broadcast"],
    "head": ["mlp", "linear", "broadcast"],
    "tie_qk": [False, True],
    "bucket_size": [10, 50, 100, 200],
    "attention": ["VA", "DVA", "KernelRBF", "LinearVA", "LinearDVA"],
    "backbone": ["transformer", "cnn"],
}

CONTEXT_SWEEP_SIZES = [10, 20, 40, 80]


def preset_names() -> List[str]:
    return sorted(PRIOR_TEMPLATES)


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def get_preset(name: str, backbone: str = "transformer", attention: str = "DVA", desk: bool = False) -> Dict[str, Any]:
    """Nested config dict for task ``name``; validate with ``TrainConfig.parse``."""
    if name not in PRIOR_TEMPLATES:
        raise ConfigError(f"unknown preset {name!r}; choose from {preset_names()}")
    if backbone not in ("transformer", "cnn"):
        raise ConfigError(f"unknown backbone {backbone!r}")

    prior = copy.deepcopy(PRIOR_TEMPLATES[name])
    layout = TRANSFORMER_TEMPLATES[name] if backbone == "transformer" else {**CNN_TEMPLATES[name], "heads": 1}
    model = {
        "backbone": backbone,
        "input_dim": prior["input_dim"],
        "bucket_count": BUCKET_COUNTS[name],
        **layout,
        "attention": {"kind": attention, "heads": layout["heads"]},
    }
    config = {**OPTIMIZATION_TEMPLATES[name], "prior": prior, "model": model}
    if desk:
        config = _merge(config, DESK_OVERRIDES[name])
    # query/key width follows the model width
    config["model"]["attention"]["d_k"] = config["model"]["width"]
    config["model"]["attention"]["heads"] = config["model"]["heads"]
    return config


def train_config(
    name: str,
    backbone: str = "transformer",
    attention: str = "DVA",
    desk: bool = False,
    overrides: Optional[Dict[str, Any]] = None,
) -> TrainConfig:
    config = get_preset(name, backbone, attention, desk)
    if overrides:
        config = _merge(config, overrides)
    return TrainConfig.parse(config)
