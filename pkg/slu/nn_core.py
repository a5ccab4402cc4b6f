"""
Minimal deterministic neural-network kernel.

Everything works on float64 numpy arrays. A vector is shape (n,), a
sequence of frames is shape (T, n). Every forward op has a backward
counterpart taking the upstream gradient and returning input gradients.
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, logsumexp

from errors import EmptySequenceError, InconsistentStateError, InvalidLabelError, InvalidShapeError

logger = logging.getLogger(__name__)

real_type = np.float64
Array = npt.NDArray[np.float64]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------
# Dense layer
# ---------------------------------------------------------
def linear_forward(x: Array, weight: Array, bias: Array) -> Array:
    """out = weight @ x + bias, for a single vector x (n_in,) or frames (T, n_in)."""
    if weight.ndim != 2 or bias.shape != (weight.shape[0],) or x.shape[-1] != weight.shape[1]:
        raise InvalidShapeError(
            f"linear: x {x.shape}, weight {weight.shape}, bias {bias.shape} do not conform"
        )
    return x @ weight.T + bias


def linear_backward(x: Array, weight: Array, grad_out: Array) -> tuple[Array, Array, Array]:
    """Returns (dx, dweight, dbias) for linear_forward(x, weight, bias)."""
    if x.ndim == 1:
        return weight.T @ grad_out, np.outer(grad_out, x), grad_out.copy()
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


# ---------------------------------------------------------
# Activations
# ---------------------------------------------------------
def gelu(x: Array) -> Array:
    # exact erf form
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: Array) -> Array:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def gelu_backward(x: Array, grad_out: Array) -> Array:
    return grad_out * gelu_grad(x)


def softmax(logits: Array, axis: int = -1) -> Array:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def log_softmax(logits: Array, axis: int = -1) -> Array:
    return logits - logsumexp(logits, axis=axis, keepdims=True)


def softmax_backward(probs: Array, grad_out: Array) -> Array:
    """Gradient w.r.t. the logits given probs = softmax(logits) along the last axis."""
    return probs * (grad_out - np.sum(grad_out * probs, axis=-1, keepdims=True))


# ---------------------------------------------------------
# Pooling
# ---------------------------------------------------------
def maxpool_time(H: Array) -> tuple[Array, npt.NDArray[np.int64]]:
    """Max over the time axis of H (T, d). Ties go to the earliest frame."""
    if H.ndim != 2:
        raise InvalidShapeError(f"maxpool_time expects (T, d), got {H.shape}")
    if H.shape[0] == 0:
        raise EmptySequenceError("maxpool_time over an empty sequence")
    argmax = np.argmax(H, axis=0)
    return H[argmax, np.arange(H.shape[1])], argmax


def maxpool_time_backward(grad_out: Array, argmax: npt.NDArray[np.int64], num_frames: int) -> Array:
    grad = np.zeros((num_frames, grad_out.shape[0]), dtype=real_type)
    grad[argmax, np.arange(grad_out.shape[0])] = grad_out
    return grad


# ---------------------------------------------------------
# Temporal convolution (kernel - 1 zero frames around the sequence)
# ---------------------------------------------------------
def conv1d_output_length(num_frames: int, stride: int) -> int:
    return -(-num_frames // stride)


def _check_left_pad(kernel_width: int, left_pad: int) -> None:
    if not 0 <= left_pad < kernel_width:
        raise InvalidShapeError(f"conv1d: left padding {left_pad} outside [0, {kernel_width - 1}]")


def _conv_patches(x: Array, kernel_width: int, stride: int, left_pad: int = 0) -> Array:
    """(T', c_in, k) windows over x (T, c_in) with k - 1 zero frames split left_pad / k - 1 - left_pad."""
    _check_left_pad(kernel_width, left_pad)
    padded = np.concatenate(
        [
            np.zeros((left_pad, x.shape[1]), dtype=real_type),
            x,
            np.zeros((kernel_width - 1 - left_pad, x.shape[1]), dtype=real_type),
        ],
        axis=0,
    )
    windows = sliding_window_view(padded, kernel_width, axis=0)
    return windows[::stride]


def conv1d_forward(x: Array, weight: Array, bias: Array, stride: int, left_pad: int = 0) -> Array:
    """x (T, c_in), weight (c_out, c_in, k), bias (c_out,) -> (ceil(T / stride), c_out)."""
    if weight.ndim != 3 or x.ndim != 2 or x.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise InvalidShapeError(
            f"conv1d: x {x.shape}, weight {weight.shape}, bias {bias.shape} do not conform"
        )
    patches = _conv_patches(x, weight.shape[2], stride, left_pad)
    return np.einsum("tck,ock->to", patches, weight) + bias


def conv1d_backward(
    x: Array, weight: Array, stride: int, grad_out: Array, left_pad: int = 0
) -> tuple[Array, Array, Array]:
    num_frames = x.shape[0]
    kernel_width = weight.shape[2]
    patches = _conv_patches(x, kernel_width, stride, left_pad)
    dweight = np.einsum("to,tck->ock", grad_out, patches)
    dbias = grad_out.sum(axis=0)
    dpatches = np.einsum("to,ock->tck", grad_out, weight)
    dpadded = np.zeros((num_frames + kernel_width - 1, x.shape[1]), dtype=real_type)
    starts = np.arange(grad_out.shape[0]) * stride
    for j in range(kernel_width):
        np.add.at(dpadded, starts + j, dpatches[:, :, j])
    return dpadded[left_pad:left_pad + num_frames], dweight, dbias


# ---------------------------------------------------------
# Loss
# ---------------------------------------------------------
def cross_entropy(logits: Array, label: int) -> tuple[float, Array]:
    """Returns (-log softmax(logits)[label], gradient w.r.t. logits)."""
    if not 0 <= label < logits.shape[0]:
        raise InvalidLabelError(f"label {label} outside [0, {logits.shape[0]})")
    log_probs = log_softmax(logits)
    grad = np.exp(log_probs)
    grad[label] -= 1.0
    return float(-log_probs[label]), grad


# ---------------------------------------------------------
# Parameter store
# ---------------------------------------------------------
@dataclass
class AdamState:
    m: Array
    v: Array
    step: int = 0


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    fan_in: int = 0
    fan_out: int = 0

    @property
    def is_bias(self) -> bool:
        return self.fan_in == 0 and self.fan_out == 0


class ParamStore:
    """Ordered named parameters with gradients and AdamW state."""

    def __init__(self):
        self._values: "OrderedDict[str, Array]" = OrderedDict()
        self._grads: dict[str, Optional[Array]] = {}
        self._state: dict[str, AdamState] = {}

    def add(self, name: str, value: Array) -> None:
        if name in self._values:
            raise InvalidShapeError(f"duplicate parameter name: {name}")
        value = np.asarray(value, dtype=real_type)
        self._values[name] = value
        self._grads[name] = None
        self._state[name] = AdamState(m=np.zeros_like(value), v=np.zeros_like(value))

    def __getitem__(self, name: str) -> Array:
        return self._values[name]

    def __setitem__(self, name: str, value: Array) -> None:
        current = self._values[name]
        value = np.asarray(value, dtype=real_type)
        if value.shape != current.shape:
            raise InvalidShapeError(f"{name}: expected shape {current.shape}, got {value.shape}")
        self._values[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self, prefix: str = "") -> list[str]:
        return [name for name in self._values if name.startswith(prefix)]

    def items(self):
        return self._values.items()

    def grad(self, name: str) -> Optional[Array]:
        return self._grads[name]

    def set_grad(self, name: str, value: Array) -> None:
        if value.shape != self._values[name].shape:
            raise InvalidShapeError(f"{name}: gradient shape {value.shape} != {self._values[name].shape}")
        self._grads[name] = np.asarray(value, dtype=real_type)

    def accumulate(self, name: str, value: Array) -> None:
        grad = self._grads[name]
        if grad is None:
            raise InconsistentStateError(f"{name}: accumulate before zero_grad")
        grad += value

    def zero_grad(self) -> None:
        for name, value in self._values.items():
            self._grads[name] = np.zeros_like(value)

    def state(self, name: str) -> AdamState:
        return self._state[name]

    def num_params(self, prefix: str = "") -> int:
        return int(sum(self._values[name].size for name in self.names(prefix)))

    def snapshot(self) -> dict[str, Array]:
        return {name: value.copy() for name, value in self._values.items()}

    def restore(self, snapshot: dict[str, Array]) -> None:
        for name, value in snapshot.items():
            self[name] = value.copy()

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, value in self._values.items():
            clone.add(name, value.copy())
            grad = self._grads[name]
            clone._grads[name] = None if grad is None else grad.copy()
            state = self._state[name]
            clone._state[name] = AdamState(m=state.m.copy(), v=state.v.copy(), step=state.step)
        return clone


def init_params(specs: Iterable[ParamSpec], seed: int) -> ParamStore:
    """Glorot-uniform weights, zero biases, drawn in spec order from one seeded generator."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for spec in specs:
        if any(dim <= 0 for dim in spec.shape):
            raise InvalidShapeError(f"{spec.name}: layer sizes must be positive, got {spec.shape}")
        if spec.is_bias:
            store.add(spec.name, np.zeros(spec.shape, dtype=real_type))
        else:
            bound = math.sqrt(6.0 / (spec.fan_in + spec.fan_out))
            store.add(spec.name, rng.uniform(-bound, bound, size=spec.shape))
    store.zero_grad()
    return store


# ---------------------------------------------------------
# Optimizer
# ---------------------------------------------------------
def clip_grad_norm(store: ParamStore, max_norm: float, names: Optional[list[str]] = None) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm; returns the norm before clipping."""
    names = store.names() if names is None else names
    total = math.sqrt(sum(float(np.sum(store.grad(name) ** 2)) for name in names))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for name in names:
            store.grad(name)[...] *= scale
    return total


def adamw_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
    names: Optional[list[str]] = None,
) -> ParamStore:
    """One AdamW update with decoupled weight decay. Gradients are left for the caller to zero."""
    names = store.names() if names is None else names
    for name in names:
        grad = store.grad(name)
        if grad is None:
            raise InconsistentStateError(f"{name}: no gradient for AdamW step")

    for name in names:
        grad = store.grad(name)
        param = store[name]
        state = store.state(name)
        state.step += 1
        param *= 1.0 - lr * weight_decay
        state.m = beta1 * state.m + (1.0 - beta1) * grad
        state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
        m_hat = state.m / (1.0 - beta1 ** state.step)
        v_hat = state.v / (1.0 - beta2 ** state.step)
        param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return store


# ---------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------
@dataclass
class GradCheckResult:
    max_relative_error: float
    worst_coordinate: Optional[tuple[str, int]] = None
    checked: int = 0


def finite_diff_check(
    loss_fn: Callable[[ParamStore], float],
    store: ParamStore,
    h: float = 1e-5,
    subsample: int = 0,
    seed: int = 0,
) -> float:
    return finite_diff_report(loss_fn, store, h=h, subsample=subsample, seed=seed).max_relative_error


def finite_diff_report(
    loss_fn: Callable[[ParamStore], float],
    store: ParamStore,
    h: float = 1e-5,
    subsample: int = 0,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare analytic gradients with central differences.

    loss_fn(store) must return the loss and leave the analytic gradient in
    store's gradient slots. subsample <= 0 checks every coordinate.
    """
    if h <= 0:
        raise ValueError("h must be positive")

    loss_fn(store)
    analytic = {name: store.grad(name).copy() for name in store.names()}

    coordinates = [(name, i) for name in store.names() for i in range(store[name].size)]
    if 0 < subsample < len(coordinates):
        rng = np.random.default_rng(seed)
        picked = np.sort(rng.choice(len(coordinates), size=subsample, replace=False))
        coordinates = [coordinates[i] for i in picked]

    result = GradCheckResult(max_relative_error=0.0, checked=len(coordinates))
    for name, index in coordinates:
        flat = store[name].reshape(-1)
        original = flat[index]
        flat[index] = original + h
        f_plus = loss_fn(store)
        flat[index] = original - h
        f_minus = loss_fn(store)
        flat[index] = original

        numeric = (f_plus - f_minus) / (2.0 * h)
        exact = analytic[name].reshape(-1)[index]
        error = abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric))
        if error > result.max_relative_error:
            result.max_relative_error = error
            result.worst_coordinate = (name, index)

    # leave the analytic gradient in place for the caller
    for name, grad in analytic.items():
        store.set_grad(name, grad)
    return result
