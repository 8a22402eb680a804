"""
Attention Service - interchangeable attention rules and locality diagnostics.

Conventions: embeddings are row vectors, projections are ``x @ W``. Heads split
the projected query/key columns (``d_k / heads`` each) and the value columns
(``width / heads`` each). Weights returned for diagnostics are numpy arrays of
shape (heads, M, N_ctx); they carry no gradient.

Rules:
  VA         queries, keys and values from joint (x + y) embeddings
  DVA        queries and keys from x embeddings, values from y embeddings
  KernelRBF  DVA streams with weights softmax(-gamma |q - k|^2)
  LinearVA   elu+1 feature-map attention on joint embeddings
  LinearDVA  elu+1 feature-map attention on decoupled streams
"""
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from dvapfn.errors import ContractError, NumericError
from dvapfn.models.enums import AttentionKind
from dvapfn.models.results import LocalityProfile
from dvapfn.numerics import (
    SeededRng,
    Tensor,
    as_tensor,
    concat_cols,
    div,
    elu_plus_one,
    exp,
    matmul,
    mul,
    reduce_sum,
    row_sq_norms,
    slice_cols,
    softmax_rows,
    sub,
    transpose,
)
from dvapfn.schemas import AttentionSpec

logger = logging.getLogger(__name__)

Params = Dict[str, Tensor]
LINEAR_DENOM_FLOOR = 1e-12


def xavier_uniform(rng: SeededRng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_attention_params(spec: AttentionSpec, d_model: int, d_v: int, rng: SeededRng) -> Dict[str, np.ndarray]:
    """Projection matrices for one attention layer; a tied layer stores W_q only."""
    params = {"W_q": xavier_uniform(rng.child(0), d_model, spec.d_k)}
    if not spec.tie_qk:
        params["W_k"] = xavier_uniform(rng.child(1), d_model, spec.d_k)
    params["W_v"] = xavier_uniform(rng.child(2), d_model, d_v)
    if spec.kind == AttentionKind.KERNEL_RBF:
        params["log_gamma"] = np.array([np.log(spec.gamma_init)])
    return params


def key_weight(params: Params) -> Tensor:
    return params["W_k"] if "W_k" in params else params["W_q"]


def _heads(t: Tensor, heads: int) -> List[Tensor]:
    width = t.shape[1]
    if width % heads:
        raise ContractError(f"{width} columns do not split into {heads} heads")
    step = width // heads
    return [slice_cols(t, g * step, (g + 1) * step) for g in range(heads)]


def _check_context(ctx: Tensor, query: Tensor) -> None:
    if ctx.shape[0] < 1:
        raise ContractError("attention needs a nonempty context")
    if ctx.shape[1] != query.shape[1]:
        raise ContractError(f"context width {ctx.shape[1]} differs from query width {query.shape[1]}")


def _softmax_attend(Q: Tensor, K: Tensor, V: Tensor, heads: int) -> Tuple[Tensor, np.ndarray]:
    temperature = np.sqrt(Q.shape[1] // heads)
    outputs, weights = [], []
    for q, k, v in zip(_heads(Q, heads), _heads(K, heads), _heads(V, heads)):
        w = softmax_rows(matmul(q, transpose(k)), temperature)
        weights.append(w.data)
        outputs.append(matmul(w, v))
    H = outputs[0] if heads == 1 else concat_cols(outputs)
    return H, np.stack(weights)


def dva_forward(ctx_x_emb, ctx_y_emb, query_x_emb, params: Params, heads: int = 1) -> Tuple[Tensor, np.ndarray]:
    """softmax(Q K^T / sqrt(d_head)) V with Q, K from inputs only and V from targets only."""
    ctx_x_emb, ctx_y_emb, query_x_emb = as_tensor(ctx_x_emb), as_tensor(ctx_y_emb), as_tensor(query_x_emb)
    _check_context(ctx_x_emb, query_x_emb)
    Q = matmul(query_x_emb, params["W_q"])
    K = matmul(ctx_x_emb, key_weight(params))
    V = matmul(ctx_y_emb, params["W_v"])
    return _softmax_attend(Q, K, V, heads)


def va_forward(ctx_joint_emb, query_emb, params: Params, heads: int = 1) -> Tuple[Tensor, np.ndarray]:
    """Dot-product attention over joint embeddings."""
    ctx_joint_emb, query_emb = as_tensor(ctx_joint_emb), as_tensor(query_emb)
    _check_context(ctx_joint_emb, query_emb)
    Q = matmul(query_emb, params["W_q"])
    K = matmul(ctx_joint_emb, key_weight(params))
    V = matmul(ctx_joint_emb, params["W_v"])
    return _softmax_attend(Q, K, V, heads)


def kernel_attention_forward(ctx_x_emb, ctx_y_emb, query_x_emb, params: Params, heads: int = 1) -> Tuple[Tensor, np.ndarray]:
    """Weights proportional to exp(-gamma |W_q phi(x*) - W_k phi(x_i)|^2); values as in DVA."""
    ctx_x_emb, ctx_y_emb, query_x_emb = as_tensor(ctx_x_emb), as_tensor(ctx_y_emb), as_tensor(query_x_emb)
    _check_context(ctx_x_emb, query_x_emb)
    gamma = exp(params["log_gamma"])
    Q = matmul(query_x_emb, params["W_q"])
    K = matmul(ctx_x_emb, key_weight(params))
    V = matmul(ctx_y_emb, params["W_v"])
    outputs, weights = [], []
    for q, k, v in zip(_heads(Q, heads), _heads(K, heads), _heads(V, heads)):
        cross = matmul(q, transpose(k))
        sq_dist = sub(row_sq_norms(q) + transpose(row_sq_norms(k)), cross * 2.0)
        w = softmax_rows(mul(sq_dist, gamma) * -1.0)
        weights.append(w.data)
        outputs.append(matmul(w, v))
    H = outputs[0] if heads == 1 else concat_cols(outputs)
    return H, np.stack(weights)


def linear_attention_forward(
    kind: AttentionKind,
    ctx_key_emb,
    ctx_value_emb,
    query_emb,
    params: Params,
    heads: int = 1,
    capture: bool = False,
) -> Tuple[Tensor, Optional[np.ndarray]]:
    """phi(Q)(phi(K)^T V) / (phi(Q) phi(K)^T 1) with phi = elu + 1.

    LinearDVA passes x embeddings as keys/queries and y embeddings as values;
    LinearVA passes the joint embeddings for both. Implied weights are only
    materialized when ``capture`` is set since they cost O(M N).
    """
    kind = AttentionKind(kind)
    if kind not in (AttentionKind.LINEAR_VA, AttentionKind.LINEAR_DVA):
        raise ContractError(f"linear attention does not implement {kind.value}")
    ctx_key_emb, ctx_value_emb, query_emb = as_tensor(ctx_key_emb), as_tensor(ctx_value_emb), as_tensor(query_emb)
    _check_context(ctx_key_emb, query_emb)
    Q = elu_plus_one(matmul(query_emb, params["W_q"]))
    K = elu_plus_one(matmul(ctx_key_emb, key_weight(params)))
    V = matmul(ctx_value_emb, params["W_v"])
    outputs, weights = [], []
    for q, k, v in zip(_heads(Q, heads), _heads(K, heads), _heads(V, heads)):
        denom = matmul(q, transpose(reduce_sum(k, axis=0, keepdims=True)))
        if np.any(denom.data < LINEAR_DENOM_FLOOR):
            raise NumericError("linear attention normalizer fell below 1e-12")
        outputs.append(div(matmul(q, matmul(transpose(k), v)), denom))
        if capture:
            affinity = q.data @ k.data.T
            weights.append(affinity / affinity.sum(axis=1, keepdims=True))
    H = outputs[0] if heads == 1 else concat_cols(outputs)
    return H, (np.stack(weights) if capture else None)


# ==================== Theory checks ====================

def dot_product_logits(W_q, W_k, x_star, X_ctx, tau: float) -> np.ndarray:
    """<x* W_q, x_i W_k> / tau for every context row."""
    W_q, W_k = as_tensor(W_q).data, as_tensor(W_k).data
    x_star = np.asarray(x_star, dtype=np.float64).reshape(1, -1)
    X_ctx = np.atleast_2d(np.asarray(X_ctx, dtype=np.float64))
    return ((x_star @ W_q) @ (X_ctx @ W_k).T).reshape(-1) / tau


def mahalanobis_logit_oracle(W_q, W_k, x_star, X_ctx, tau: float) -> np.ndarray:
    """Logits rebuilt from squared A-norms with A = W_q W_k^T.

    (|x*|_A^2 + |x_i|_A^2 - |x* - x_i|_A^2) / (2 tau), which equals the
    dot-product logit whenever A is symmetric.
    """
    W_q, W_k = as_tensor(W_q).data, as_tensor(W_k).data
    if not tau > 0:
        raise ContractError(f"tau must be > 0, got {tau}")
    A = W_q @ W_k.T
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12):
        raise ContractError("metric W_q W_k^T is not symmetric")
    x_star = np.asarray(x_star, dtype=np.float64).reshape(1, -1)
    X_ctx = np.atleast_2d(np.asarray(X_ctx, dtype=np.float64))

    def sq_norm(rows: np.ndarray) -> np.ndarray:
        return np.einsum("ij,jk,ik->i", rows, A, rows)

    diff = x_star - X_ctx
    return (sq_norm(x_star)[0] + sq_norm(X_ctx) - sq_norm(diff)) / (2.0 * tau)


def far_mass(weights, X_ctx, X_query, epsilon: float) -> np.ndarray:
    """Attention mass each query puts on context points farther than ``epsilon``."""
    if not epsilon > 0:
        raise ContractError(f"epsilon must be > 0, got {epsilon}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim == 3:
        weights = weights.mean(axis=0)
    dist = cdist(np.atleast_2d(X_query), np.atleast_2d(X_ctx))
    if dist.shape != weights.shape:
        raise ContractError(f"weights {weights.shape} do not match query/context {dist.shape}")
    return (weights * (dist > epsilon)).sum(axis=1)


# ==================== Locality diagnostics ====================

def locality_profile(model, dataset, layer: int, n_context: Optional[int] = None) -> LocalityProfile:
    """(distance, weight) for every query/context pair at ``layer`` (1-based).

    The first ``n_context`` points (default half) are the context, the rest
    are queries.
    """
    from dvapfn.services.backbones import forward_with_weights

    n_layers = model.spec.layers
    if not 1 <= layer <= n_layers:
        raise ContractError(f"layer {layer} outside 1..{n_layers}")
    n_context = n_context or dataset.n_points // 2
    context, query = dataset.split(n_context)
    _, captured = forward_with_weights(model, context, query.X)
    weights = captured[layer - 1]
    if weights is None:
        raise ContractError(f"layer {layer} did not capture attention weights")
    dist = cdist(query.X, context.X)

    profile = LocalityProfile(layer=layer)
    for head, w in enumerate(weights):
        profile.heads.extend([head] * w.size)
        profile.distances.extend(dist.reshape(-1).tolist())
        profile.weights.extend(w.reshape(-1).tolist())
    return profile


def head_averaged(profile: LocalityProfile) -> Tuple[np.ndarray, np.ndarray]:
    """Distances and weights averaged over heads, one entry per query/context pair."""
    n_heads = len(set(profile.heads)) or 1
    pairs = len(profile.distances) // n_heads
    distances = np.asarray(profile.distances[:pairs])
    weights = np.asarray(profile.weights).reshape(n_heads, pairs).mean(axis=0)
    return distances, weights


def locality_spearman(profile: LocalityProfile) -> float:
    """Rank correlation between distance and log of the head-averaged weight."""
    distances, weights = head_averaged(profile)
    rho = stats.spearmanr(distances, np.log(np.maximum(weights, 1e-300))).statistic
    return float(rho) if np.isfinite(rho) else 0.0
