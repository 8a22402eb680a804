"""
Backbone Service - PFN models assembled from encoders, attention blocks and a head.

Decoupled attention kinds keep two streams over all points (context rows
first, then queries):

  h_x  input stream, phi_x(X); the CNN convolves it, attention reads Q/K from it
  h_y  target stream, phi_y(y) on context rows and zeros on query rows

Coupled kinds (VA, LinearVA) keep one joint stream: phi_x(x) + phi_y(y) on
context rows and phi_x(x) + a learned placeholder on query rows.

Every block is pre-norm: the stream gets ``+ Attn(LN(.)) W_o`` and, in the
transformer, ``+ FFN(LN(.))``. The head reads the final layer-normed query rows.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from dvapfn.errors import ContractError
from dvapfn.models.datasets import SyntheticDataset
from dvapfn.models.enums import AttentionKind, BackboneKind, EncoderKind, HeadKind
from dvapfn.numerics import (
    SeededRng,
    Tensor,
    as_tensor,
    concat_rows,
    conv1d_depthwise,
    gelu,
    layer_norm,
    matmul,
    slice_cols,
    slice_rows,
)
from dvapfn.schemas import EncoderSpec, ModelSpec
from dvapfn.services.attention import (
    dva_forward,
    init_attention_params,
    kernel_attention_forward,
    linear_attention_forward,
    va_forward,
    xavier_uniform,
)
from dvapfn.services.bardist import BucketSpec, uniform_buckets

logger = logging.getLogger(__name__)

Params = Dict[str, Tensor]


@dataclass
class PFNModel:
    """Spec, named fp64 parameters and the frozen bucket edges."""
    spec: ModelSpec
    params: Dict[str, np.ndarray]
    buckets: BucketSpec
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def decoupled(self) -> bool:
        return self.spec.attention.kind.decoupled

    def constants(self) -> Params:
        return {name: Tensor(value) for name, value in self.params.items()}

    def copy(self) -> "PFNModel":
        return PFNModel(
            spec=self.spec,
            params={k: v.copy() for k, v in self.params.items()},
            buckets=self.buckets,
            metadata=dict(self.metadata),
        )


# ==================== Construction ====================

def _encoder_params(prefix: str, enc: EncoderSpec, d_in: int, width: int, rng: SeededRng) -> Dict[str, np.ndarray]:
    if enc.kind == EncoderKind.LINEAR:
        return {f"{prefix}.W": xavier_uniform(rng.child(0), d_in, width), f"{prefix}.b": np.zeros(width)}
    if enc.kind == EncoderKind.MLP2:
        hidden = enc.width or width
        return {
            f"{prefix}.W1": xavier_uniform(rng.child(0), d_in, hidden),
            f"{prefix}.b1": np.zeros(hidden),
            f"{prefix}.W2": xavier_uniform(rng.child(1), hidden, width),
            f"{prefix}.b2": np.zeros(width),
        }
    return {}


def _layer_norm_params(prefix: str, width: int) -> Dict[str, np.ndarray]:
    return {f"{prefix}.gain": np.ones(width), f"{prefix}.bias": np.zeros(width)}


def _head_params(kind: HeadKind, width: int, B: int, rng: SeededRng) -> Dict[str, np.ndarray]:
    if kind == HeadKind.LINEAR:
        return {"head.W": xavier_uniform(rng.child(0), width, B), "head.b": np.zeros(B)}
    if kind == HeadKind.MLP:
        return {
            "head.W1": xavier_uniform(rng.child(0), width, width),
            "head.b1": np.zeros(width),
            "head.W2": xavier_uniform(rng.child(1), width, B),
            "head.b2": np.zeros(B),
        }
    return {}


def build_model(spec: ModelSpec, rng: SeededRng, buckets: Optional[BucketSpec] = None) -> PFNModel:
    """Xavier-uniform weights, zero biases, unit layer-norm gains.

    Without ``buckets`` the model gets equal-width placeholder buckets on [0, 1];
    training replaces them with prior-quantile edges.
    """
    if not isinstance(spec, ModelSpec):
        spec = ModelSpec.parse(spec)
    if buckets is not None and buckets.B != spec.bucket_count:
        raise ContractError(f"buckets have B={buckets.B}, spec wants {spec.bucket_count}")
    width = spec.width
    params: Dict[str, np.ndarray] = {}
    params.update(_encoder_params("phi_x", spec.phi_x, spec.input_dim, width, rng.child(0)))
    params.update(_encoder_params("phi_y", spec.phi_y, 1, width, rng.child(1)))
    if not spec.attention.kind.decoupled:
        params["y_placeholder"] = xavier_uniform(rng.child(2), 1, width)

    for layer in range(spec.layers):
        prefix = f"layers.{layer}"
        layer_rng = rng.child(10 + layer)
        if spec.backbone == BackboneKind.CNN:
            params[f"{prefix}.conv.weight"] = xavier_uniform(layer_rng.child(0), spec.kernel_size, width)
        if spec.attention.kind.decoupled:
            params.update(_layer_norm_params(f"{prefix}.ln_x", width))
        params.update(_layer_norm_params(f"{prefix}.ln_h", width))
        for name, value in init_attention_params(spec.attention, width, width, layer_rng.child(1)).items():
            params[f"{prefix}.attn.{name}"] = value
        params[f"{prefix}.attn.W_o"] = xavier_uniform(layer_rng.child(2), width, width)
        if spec.backbone == BackboneKind.TRANSFORMER:
            params.update(_layer_norm_params(f"{prefix}.ln_ffn", width))
            params[f"{prefix}.ffn.W1"] = xavier_uniform(layer_rng.child(3), width, spec.ffn_dim)
            params[f"{prefix}.ffn.b1"] = np.zeros(spec.ffn_dim)
            params[f"{prefix}.ffn.W2"] = xavier_uniform(layer_rng.child(4), spec.ffn_dim, width)
            params[f"{prefix}.ffn.b2"] = np.zeros(width)

    params.update(_layer_norm_params("ln_out", width))
    params.update(_head_params(spec.head, width, spec.bucket_count, rng.child(3)))
    model = PFNModel(spec=spec, params=params, buckets=buckets or uniform_buckets(0.0, 1.0, spec.bucket_count))
    logger.debug("built %s/%s model with %d parameters", spec.backbone.value, spec.attention.kind.value, model.n_params)
    return model


def parameter_count(spec: ModelSpec) -> int:
    """Closed-form parameter count from a ModelSpec, without building weights."""
    w, B, d = spec.width, spec.bucket_count, spec.input_dim

    def encoder(enc: EncoderSpec, d_in: int) -> int:
        if enc.kind == EncoderKind.LINEAR:
            return d_in * w + w
        if enc.kind == EncoderKind.MLP2:
            hidden = enc.width or w
            return d_in * hidden + hidden + hidden * w + w
        return 0

    att = spec.attention
    per_layer = 2 * w + w * att.d_k * (1 if att.tie_qk else 2) + w * w + w * w
    if att.kind.decoupled:
        per_layer += 2 * w
    if att.kind == AttentionKind.KERNEL_RBF:
        per_layer += 1
    if spec.backbone == BackboneKind.CNN:
        per_layer += spec.kernel_size * w
    else:
        per_layer += 2 * w + w * spec.ffn_dim + spec.ffn_dim + spec.ffn_dim * w + w
    head = {HeadKind.LINEAR: w * B + B, HeadKind.MLP: w * w + w + w * B + B, HeadKind.BROADCAST: 0}[spec.head]
    placeholder = 0 if att.kind.decoupled else w
    return encoder(spec.phi_x, d) + encoder(spec.phi_y, 1) + placeholder + spec.layers * per_layer + 2 * w + head


# ==================== Layers ====================

def _linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return matmul(x, W) + b


def encode(prefix: str, enc: EncoderSpec, values, params: Params, width: int) -> Tensor:
    values = as_tensor(values)
    if enc.kind == EncoderKind.LINEAR:
        return _linear(values, params[f"{prefix}.W"], params[f"{prefix}.b"])
    if enc.kind == EncoderKind.MLP2:
        hidden = gelu(_linear(values, params[f"{prefix}.W1"], params[f"{prefix}.b1"]))
        return _linear(hidden, params[f"{prefix}.W2"], params[f"{prefix}.b2"])
    # broadcast: column j repeats input column j mod d_in
    d_in = values.shape[1]
    tile = np.zeros((d_in, width))
    tile[np.arange(width) % d_in, np.arange(width)] = 1.0
    return matmul(values, tile)


def _ln(h: Tensor, params: Params, prefix: str) -> Tensor:
    return layer_norm(h, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def _attention_params(params: Params, prefix: str) -> Params:
    head = f"{prefix}.attn."
    return {k[len(head):]: v for k, v in params.items() if k.startswith(head)}


def _attend(
    spec: ModelSpec,
    attn: Params,
    stream_x: Optional[Tensor],
    stream_h: Tensor,
    n_context: int,
    capture: bool,
) -> Tuple[Tensor, Optional[np.ndarray]]:
    kind, heads = spec.attention.kind, spec.heads
    if kind.decoupled:
        ctx_x, ctx_y = slice_rows(stream_x, 0, n_context), slice_rows(stream_h, 0, n_context)
        if kind == AttentionKind.DVA:
            return dva_forward(ctx_x, ctx_y, stream_x, attn, heads)
        if kind == AttentionKind.KERNEL_RBF:
            return kernel_attention_forward(ctx_x, ctx_y, stream_x, attn, heads)
        return linear_attention_forward(kind, ctx_x, ctx_y, stream_x, attn, heads, capture)
    ctx = slice_rows(stream_h, 0, n_context)
    if kind == AttentionKind.VA:
        return va_forward(ctx, stream_h, attn, heads)
    return linear_attention_forward(kind, ctx, ctx, stream_h, attn, heads, capture)


def transformer_block(
    h: Tensor,
    params: Params,
    spec: ModelSpec,
    n_context: int,
    prefix: str = "layers.0",
    h_x: Optional[Tensor] = None,
    capture: bool = False,
) -> Tuple[Tensor, Optional[Tensor], Optional[np.ndarray]]:
    """Pre-norm residual block: h + Attn(LN(h)) W_o, then + FFN(LN(.)).

    ``h`` is the joint stream for coupled attention and the target stream for
    decoupled attention, in which case ``h_x`` supplies queries and keys.
    Returns ``(h, h_x, weights)``.
    """
    stream_x = _ln(h_x, params, f"{prefix}.ln_x") if h_x is not None else None
    attended, weights = _attend(spec, _attention_params(params, prefix), stream_x, _ln(h, params, f"{prefix}.ln_h"), n_context, capture)
    h = h + matmul(attended, params[f"{prefix}.attn.W_o"])
    hidden = gelu(_linear(_ln(h, params, f"{prefix}.ln_ffn"), params[f"{prefix}.ffn.W1"], params[f"{prefix}.ffn.b1"]))
    h = h + _linear(hidden, params[f"{prefix}.ffn.W2"], params[f"{prefix}.ffn.b2"])
    return h, h_x, weights


def cnn_block(
    h: Tensor,
    params: Params,
    spec: ModelSpec,
    n_context: int,
    prefix: str = "layers.0",
    h_x: Optional[Tensor] = None,
    capture: bool = False,
) -> Tuple[Tensor, Optional[Tensor], Optional[np.ndarray]]:
    """Depthwise convolution over the point axis, then residual attention.

    The convolution acts on the input stream when attention is decoupled and
    on the joint stream otherwise. Returns ``(h, h_x, weights)``.
    """
    kernel = params[f"{prefix}.conv.weight"]
    if h_x is not None:
        h_x = conv1d_depthwise(h_x, kernel)
        stream_x = _ln(h_x, params, f"{prefix}.ln_x")
    else:
        h = conv1d_depthwise(h, kernel)
        stream_x = None
    attended, weights = _attend(spec, _attention_params(params, prefix), stream_x, _ln(h, params, f"{prefix}.ln_h"), n_context, capture)
    h = h + matmul(attended, params[f"{prefix}.attn.W_o"])
    return h, h_x, weights


def _head(h: Tensor, params: Params, spec: ModelSpec) -> Tensor:
    if spec.head == HeadKind.LINEAR:
        return _linear(h, params["head.W"], params["head.b"])
    if spec.head == HeadKind.MLP:
        hidden = gelu(_linear(h, params["head.W1"], params["head.b1"]))
        return _linear(hidden, params["head.W2"], params["head.b2"])
    # broadcast: one hidden channel copied to every bucket
    return matmul(slice_cols(h, 0, 1), np.ones((1, spec.bucket_count)))


# ==================== Forward ====================

def forward_with_weights(
    model: PFNModel,
    context: SyntheticDataset,
    query_x,
    params: Optional[Params] = None,
) -> Tuple[Tensor, List[Optional[np.ndarray]]]:
    """Logits (M x B) and, per layer, the query rows' attention weights (heads x M x N_ctx)."""
    return _forward(model, context, query_x, params, capture=True)


def forward(model: PFNModel, context: SyntheticDataset, query_x, params: Optional[Params] = None) -> Tensor:
    """Per-query bucket logits (M x B)."""
    logits, _ = _forward(model, context, query_x, params, capture=False)
    return logits


def _forward(model, context, query_x, params, capture):
    spec = model.spec
    params = params if params is not None else model.constants()
    query_x = np.atleast_2d(np.asarray(query_x.data if isinstance(query_x, Tensor) else query_x, dtype=np.float64))
    n_ctx, n_query = context.n_points, query_x.shape[0]
    if n_ctx < 1:
        raise ContractError("forward needs a nonempty context")
    if context.input_dim != spec.input_dim or query_x.shape[1] != spec.input_dim:
        raise ContractError(
            f"model expects input_dim={spec.input_dim}, got context {context.input_dim} and queries {query_x.shape[1]}"
        )

    X_all = np.vstack([context.X, query_x])
    phi_x = encode("phi_x", spec.phi_x, X_all, params, spec.width)
    phi_y = encode("phi_y", spec.phi_y, context.y[:, None], params, spec.width)
    if model.decoupled:
        h_x = phi_x
        h = concat_rows([phi_y, np.zeros((n_query, spec.width))])
    else:
        h_x = None
        placeholder = matmul(np.ones((n_query, 1)), params["y_placeholder"])
        h = phi_x + concat_rows([phi_y, placeholder])

    block = cnn_block if spec.backbone == BackboneKind.CNN else transformer_block
    captured: List[Optional[np.ndarray]] = []
    for layer in range(spec.layers):
        h, h_x, weights = block(h, params, spec, n_ctx, f"layers.{layer}", h_x=h_x, capture=capture)
        captured.append(None if weights is None else weights[:, n_ctx:, :])

    out = slice_rows(_ln(h, params, "ln_out"), n_ctx, n_ctx + n_query)
    return _head(out, params, spec), captured
