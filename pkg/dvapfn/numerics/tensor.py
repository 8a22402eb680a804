"""
Dense fp64 tensors and a minimal reverse-mode differentiation tape.

A ``Tensor`` is an immutable numpy array (row-major, float64). Operations on
tensors that live on a ``Tape`` append one node per primitive; ``Tape.backward``
replays the nodes in reverse creation order, which is a valid topological
order because every node is created after its inputs. Tensors without a tape
are constants and cost nothing beyond the numpy call.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from dvapfn.errors import ConfigError, ContractError, NumericError


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

LAYER_NORM_EPS = 1e-5


class Tensor:
    """Immutable fp64 array, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "index")

    def __init__(self, data: ArrayLike, tape: Optional["Tape"] = None, index: Optional[int] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        self.data = arr
        self.tape = tape
        self.index = index

    @classmethod
    def _wrap(cls, arr: np.ndarray, tape: Optional["Tape"] = None, index: Optional[int] = None) -> "Tensor":
        obj = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        obj.data = arr
        obj.tape = tape
        obj.index = index
        return obj

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    def __repr__(self) -> str:
        tag = f", tape_index={self.index}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag})"


@dataclass
class _Node:
    inputs: Tuple[Optional[int], ...]
    vjp: Optional[VJP]
    shape: Tuple[int, ...]
    name: Optional[str] = None


class Tape:
    """Per-step record of primitive ops; discarded after ``backward``."""

    def __init__(self):
        self._nodes: List[_Node] = []
        self._leaves: Dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, value: ArrayLike, name: Optional[str] = None) -> Tensor:
        """Register a leaf (trainable parameter or input)."""
        if name is None:
            name = f"leaf{len(self._leaves)}"
        if name in self._leaves:
            raise ContractError(f"leaf '{name}' already on tape")
        arr = np.array(value.data if isinstance(value, Tensor) else value, dtype=np.float64, copy=True)
        index = len(self._nodes)
        self._nodes.append(_Node(inputs=(), vjp=None, shape=arr.shape, name=name))
        self._leaves[name] = index
        return Tensor._wrap(arr, self, index)

    def record(self, value: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
        index = len(self._nodes)
        ids = tuple(t.index if t.tape is self else None for t in inputs)
        self._nodes.append(_Node(inputs=ids, vjp=vjp, shape=np.shape(value)))
        return Tensor._wrap(value, self, index)

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every leaf, keyed by leaf name."""
        if loss.tape is not self:
            raise ContractError("loss tensor is not recorded on this tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: List[Optional[np.ndarray]] = [None] * len(self._nodes)
        grads[loss.index] = np.ones(loss.shape)
        for i in range(loss.index, -1, -1):
            node = self._nodes[i]
            g = grads[i]
            if g is None or node.vjp is None:
                continue
            for src, contribution in zip(node.inputs, node.vjp(g)):
                if src is None or contribution is None:
                    continue
                if grads[src] is None:
                    grads[src] = np.array(contribution, dtype=np.float64)
                else:
                    grads[src] = grads[src] + contribution
        return {
            name: grads[idx] if grads[idx] is not None else np.zeros(self._nodes[idx].shape)
            for name, idx in self._leaves.items()
        }


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    return tape.backward(loss)


# ==================== Helpers ====================

def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _tape_of(*tensors: Tensor) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands recorded on different tapes")
            tape = t.tape
    return tape


def _emit(value: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor._wrap(value)
    return tape.record(value, inputs, vjp)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ==================== Elementwise ====================

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _emit(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    out = a.data / b.data
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


def gelu(a: ArrayLike) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return _emit(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def elu_plus_one(a: ArrayLike) -> Tensor:
    """Positive feature map elu(u) + 1."""
    a = as_tensor(a)
    x = a.data
    pos = x > 0
    expx = np.exp(np.minimum(x, 0.0))
    out = np.where(pos, x + 1.0, expx)
    return _emit(out, (a,), lambda g: (g * np.where(pos, 1.0, expx),))


# ==================== Shape ====================

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D operand, got {a.shape}")
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,))


def reduce_sum(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(out, (a,), vjp)


def reduce_mean(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def slice_rows(a: ArrayLike, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros(a.shape)
        full[start:stop] = g
        return (full,)

    return _emit(a.data[start:stop].copy(), (a,), vjp)


def slice_cols(a: ArrayLike, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return (full,)

    return _emit(a.data[:, start:stop].copy(), (a,), vjp)


def concat_rows(parts: Iterable[ArrayLike]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    return _emit(
        np.concatenate([p.data for p in parts], axis=0),
        parts,
        lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts))),
    )


def concat_cols(parts: Iterable[ArrayLike]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return _emit(
        np.concatenate([p.data for p in parts], axis=1),
        parts,
        lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))),
    )


def take_rows(a: ArrayLike, columns: np.ndarray) -> Tensor:
    """Pick ``a[i, columns[i]]`` for every row; returns shape (M,)."""
    a = as_tensor(a)
    columns = np.asarray(columns, dtype=np.int64)
    if a.data.ndim != 2 or columns.shape != (a.shape[0],):
        raise DimensionError(f"take_rows needs (M, B) and (M,), got {a.shape} and {columns.shape}")
    rows = np.arange(a.shape[0])

    def vjp(g):
        full = np.zeros(a.shape)
        full[rows, columns] = g
        return (full,)

    return _emit(a.data[rows, columns].copy(), (a,), vjp)


# ==================== Composite primitives ====================

def softmax_rows(logits: ArrayLike, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax of ``logits / temperature`` with max-subtraction."""
    logits = as_tensor(logits)
    if not temperature > 0:
        raise ContractError(f"temperature must be > 0, got {temperature}")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("softmax_rows received non-finite logits")
    z = logits.data / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) * out / temperature,)

    return _emit(out, (logits,), vjp)


def log_softmax_rows(logits: ArrayLike) -> Tensor:
    logits = as_tensor(logits)
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("log_softmax_rows received non-finite logits")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(out)
    return _emit(out, (logits,), lambda g: (g - probs * g.sum(axis=-1, keepdims=True),))


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit (population) variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm shapes: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, d)
        return dx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return _emit(out, (x, gain, bias), vjp)


def conv1d_depthwise(x: ArrayLike, weight: ArrayLike) -> Tensor:
    """Per-channel correlation over the row axis with zero padding.

    ``x`` is (N, d) and ``weight`` is (kernel_size, d); the kernel size is read
    from ``weight.shape[0]`` and must be odd. The output keeps length N.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.data.ndim != 2 or x.data.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1d_depthwise shapes: x {x.shape}, weight {weight.shape}")
    kernel_size = weight.shape[0]
    if kernel_size % 2 == 0:
        raise ConfigError(f"kernel_size must be odd, got {kernel_size}")
    n, pad = x.shape[0], kernel_size // 2
    padded = np.pad(x.data, ((pad, pad), (0, 0)))
    out = np.zeros(x.shape)
    for j in range(kernel_size):
        out += weight.data[j] * padded[j:j + n]

    def vjp(g):
        gpad = np.zeros(padded.shape)
        gw = np.zeros(weight.shape)
        for j in range(kernel_size):
            gpad[j:j + n] += g * weight.data[j]
            gw[j] = (g * padded[j:j + n]).sum(axis=0)
        return gpad[pad:pad + n], gw

    return _emit(out, (x, weight), vjp)


def row_sq_norms(a: ArrayLike) -> Tensor:
    """Squared Euclidean norm of each row as an (N, 1) column."""
    a = as_tensor(a)
    return reduce_sum(mul(a, a), axis=1, keepdims=True)


# ==================== Gradient checking ====================

def gradcheck(
    fn: Callable[[Dict[str, Tensor]], Tensor],
    inputs: Dict[str, np.ndarray],
    h: float = 1e-5,
) -> Dict[str, float]:
    """Relative error between tape gradients and central differences, per input.

    The error for an input is ``||g_tape - g_fd|| / max(||g_tape|| + ||g_fd||, 1e-12)``.
    """
    tape = Tape()
    leaves = {name: tape.watch(value, name) for name, value in inputs.items()}
    analytic = tape.backward(fn(leaves))

    errors = {}
    for name, value in inputs.items():
        numeric = np.zeros(np.shape(value))
        base = np.array(value, dtype=np.float64)
        for idx in np.ndindex(base.shape):
            values = {}
            for sign in (1.0, -1.0):
                perturbed = base.copy()
                perturbed[idx] += sign * h
                args = {k: Tensor(v) for k, v in inputs.items()}
                args[name] = Tensor(perturbed)
                values[sign] = fn(args).item()
            numeric[idx] = (values[1.0] - values[-1.0]) / (2.0 * h)
        diff = np.linalg.norm(analytic[name] - numeric)
        scale = max(np.linalg.norm(analytic[name]) + np.linalg.norm(numeric), 1e-12)
        errors[name] = float(diff / scale)
    return errors
