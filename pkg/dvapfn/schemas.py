"""
Pydantic schemas for experiment configuration and run records.

Every model raises ``ConfigError`` on invalid input, whether built directly or
through ``parse``.
"""
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from dvapfn.errors import ConfigError
from dvapfn.models.enums import (
    AttentionKind,
    BackboneKind,
    EncoderKind,
    FilterKind,
    HeadKind,
    InputNormalization,
    KernelKind,
)


class SpecModel(BaseModel):
    """Frozen, strict-keyed base for configuration records."""

    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)

    def __init__(self, **data: Any):
        try:
            super().__init__(**data)
        except ValidationError as exc:
            raise ConfigError(f"invalid {type(self).__name__}: {exc}") from exc

    @classmethod
    def parse(cls, data: Dict[str, Any]):
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def _check_range(name: str, bounds: Optional[Tuple[float, float]]) -> None:
    if bounds is None:
        return
    low, high = bounds
    if not 0 < low <= high:
        raise ValueError(f"{name} must satisfy 0 < low <= high, got {bounds}")


# ==================== Prior Schemas ====================

class KernelSpec(SpecModel):
    """Covariance family of a GP prior.

    ``lengthscale_range`` is sampled per dataset for ``rbf_sampled`` and gives
    the first component of ``sum_of_two_rbf``; ``second_lengthscale_range``
    gives its second component. The two-RBF sum is scaled by one half so its
    diagonal still equals ``signal_variance``.
    """
    kind: KernelKind = KernelKind.RBF_FIXED
    lengthscale: float = Field(0.6, gt=0)
    second_lengthscale: float = Field(0.03, gt=0)
    lengthscale_range: Optional[Tuple[float, float]] = None
    second_lengthscale_range: Optional[Tuple[float, float]] = None
    signal_variance: float = Field(0.01, gt=0)
    # linear-periodic family
    period: float = Field(0.2, gt=0)
    slope: float = 1.0
    linear_offset: float = Field(0.1, ge=0)
    periodic_lengthscale: float = Field(0.5, gt=0)

    @model_validator(mode="after")
    def _ranges(self):
        _check_range("lengthscale_range", self.lengthscale_range)
        _check_range("second_lengthscale_range", self.second_lengthscale_range)
        if self.kind == KernelKind.RBF_SAMPLED and self.lengthscale_range is None:
            raise ValueError("rbf_sampled needs lengthscale_range")
        return self


class PriorConfig(SpecModel):
    """Synthetic dataset generator settings (one row of the prior table)."""
    input_dim: int = Field(1, ge=1)
    points_per_dataset: int = Field(100, ge=2)
    kernel: KernelSpec = Field(default_factory=KernelSpec)
    noise_variance: float = Field(1e-2, ge=0)
    output_shift: float = 1.0
    output_shift_range: Optional[Tuple[float, float]] = None
    input_normalization: InputNormalization = InputNormalization.UNIFORM01
    mixture: Optional[List[KernelSpec]] = None

    @model_validator(mode="after")
    def _shift(self):
        if self.output_shift_range is not None and self.output_shift_range[0] > self.output_shift_range[1]:
            raise ValueError(f"output_shift_range must be ordered, got {self.output_shift_range}")
        if self.mixture is not None and len(self.mixture) == 0:
            raise ValueError("mixture must list at least one kernel")
        return self


# ==================== Model Schemas ====================

class AttentionSpec(SpecModel):
    """Attention rule and its projection sizes."""
    kind: AttentionKind = AttentionKind.DVA
    d_k: int = Field(32, ge=1)
    heads: int = Field(1, ge=1)
    gamma_init: float = Field(1.0, gt=0)
    tie_qk: bool = False

    @model_validator(mode="after")
    def _heads(self):
        if self.d_k % self.heads:
            raise ValueError(f"d_k={self.d_k} not divisible by heads={self.heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_k // self.heads


class EncoderSpec(SpecModel):
    """Input (phi_x) or target (phi_y) encoder; ``width`` is the mlp2 hidden size."""
    kind: EncoderKind = EncoderKind.LINEAR
    width: Optional[int] = Field(None, ge=1)


class ModelSpec(SpecModel):
    """Backbone, encoders, attention and head of a PFN."""
    backbone: BackboneKind = BackboneKind.TRANSFORMER
    input_dim: int = Field(1, ge=1)
    width: int = Field(32, ge=1)
    layers: int = Field(1, ge=1)
    heads: int = Field(1, ge=1)
    ffn_dim: int = Field(64, ge=1)
    kernel_size: int = Field(5, ge=1)
    attention: AttentionSpec = Field(default_factory=AttentionSpec)
    phi_x: EncoderSpec = Field(default_factory=EncoderSpec)
    phi_y: EncoderSpec = Field(default_factory=EncoderSpec)
    head: HeadKind = HeadKind.LINEAR
    bucket_count: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _consistent(self):
        if self.attention.heads != self.heads:
            raise ValueError(f"attention.heads={self.attention.heads} differs from heads={self.heads}")
        if self.width % self.heads:
            raise ValueError(f"width={self.width} not divisible by heads={self.heads}")
        if self.backbone == BackboneKind.CNN and self.kernel_size % 2 == 0:
            raise ValueError(f"cnn kernel_size must be odd, got {self.kernel_size}")
        if self.phi_x.kind == EncoderKind.BROADCAST and self.input_dim > self.width:
            raise ValueError("broadcast phi_x needs input_dim <= width")
        return self


# ==================== Training Schemas ====================

class TrainConfig(SpecModel):
    """Meta-training run: optimization schedule, prior and model."""
    epochs: int = Field(10, ge=1)
    steps_per_epoch: int = Field(100, ge=1)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(1e-3, ge=0)
    warmup_epochs: int = Field(2, ge=0)
    weight_decay: float = Field(0.0, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    grad_clip: Optional[float] = Field(1.0, gt=0)
    seed: int = 0
    val_datasets: int = Field(64, ge=1)
    bucket_samples: int = Field(100_000, ge=10)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    model: ModelSpec = Field(default_factory=ModelSpec)

    @model_validator(mode="after")
    def _schedule(self):
        if self.warmup_epochs >= self.epochs:
            raise ValueError(f"warmup_epochs={self.warmup_epochs} must be < epochs={self.epochs}")
        if self.model.input_dim != self.prior.input_dim:
            raise ValueError("model.input_dim must match prior.input_dim")
        return self

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch


# ==================== Baseline Schemas ====================

class GPHyper(SpecModel):
    """RBF GP hyperparameters; one lengthscale (shared) or one per input (ARD)."""
    lengthscales: List[float] = Field(..., min_length=1)
    signal_variance: float = Field(..., gt=0)
    noise_variance: float = Field(..., gt=0)

    @model_validator(mode="after")
    def _positive(self):
        if any(not ls > 0 for ls in self.lengthscales):
            raise ValueError(f"lengthscales must be > 0, got {self.lengthscales}")
        return self


class PostHocFilter(SpecModel):
    """Inference-time context filter."""
    kind: FilterKind = FilterKind.KNN
    k: Optional[int] = Field(None, ge=1)
    gamma: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _params(self):
        if self.kind == FilterKind.KNN and self.k is None:
            raise ValueError("knn filter needs k")
        if self.kind == FilterKind.EXPONENTIAL and self.gamma is None:
            raise ValueError("exponential filter needs gamma")
        return self


# ==================== Run Schemas ====================

class RunManifest(BaseModel):
    """Everything needed to reproduce one CLI run."""
    subcommand: str
    config: Dict[str, Any]
    seed: int
    overrides: List[str] = Field(default_factory=list)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    tool_version: str
