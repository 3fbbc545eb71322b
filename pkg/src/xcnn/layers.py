"""Differentiable layers: descriptors, per-layer state, forward/backward math.

Layer kinds: Conv2D, MaxPool2x2, ReLU, Dropout, BatchNorm, Flatten, Dense,
Softmax.  ``layer_forward``/``layer_backward`` give uniform dispatch; each
forward stores whatever its backward needs in ``LayerState.cache``.

Conventions fixed here: inverted dropout (survivors scaled by 1/(1-rate) at
train time, inference is the identity); ReLU subgradient 0 at exactly 0;
softmax with per-row max subtraction; batch norm defaults momentum 0.99 and
epsilon 1e-3, normalizing over all axes but the last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .errors import DimensionError, ParameterError, StateError
from .tensor import Tensor, conv2d_grads, conv2d_valid, matmul, maxpool2x2, maxpool2x2_backward

KINDS = ("Conv2D", "MaxPool2x2", "ReLU", "Dropout", "BatchNorm", "Flatten", "Dense", "Softmax")


class Mode(Enum):
    TRAIN = "train"
    INFER = "infer"


@dataclass(frozen=True)
class LayerDescriptor:
    """One layer's kind plus its hyperparameters (unused fields stay None)."""

    kind: str
    filters: int | None = None          # Conv2D
    kernel: tuple[int, int] = (3, 3)    # Conv2D
    rate: float | None = None           # Dropout
    units: int | None = None            # Dense
    momentum: float = 0.99              # BatchNorm
    epsilon: float = 1e-3               # BatchNorm

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "Conv2D" and (self.filters is None or self.filters < 1):
            raise ParameterError("Conv2D needs filters >= 1")
        if self.kind == "Dense" and (self.units is None or self.units < 1):
            raise ParameterError("Dense needs units >= 1")
        if self.kind == "Dropout":
            if self.rate is None or not 0.0 <= self.rate < 1.0:
                raise ParameterError(f"Dropout rate must be in [0, 1), got {self.rate}")


@dataclass
class LayerState:
    """Parameters, their gradients, forward caches, and BN running stats."""

    params: dict[str, Tensor] = field(default_factory=dict)
    grads: dict[str, Tensor] = field(default_factory=dict)
    cache: dict[str, Any] = field(default_factory=dict)
    running_stats: dict[str, Tensor] = field(default_factory=dict)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def relu_backward(upstream: Tensor, x: Tensor) -> Tensor:
    return np.where(x > 0.0, upstream, 0.0)


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax of (n, k) logits, k >= 2, with max subtraction."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"softmax expects (n, k) with k >= 2, got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(upstream: Tensor, probs: Tensor) -> Tensor:
    """Jacobian-vector product dL/dlogits given dL/dprobs."""
    inner = (upstream * probs).sum(axis=1, keepdims=True)
    return probs * (upstream - inner)


def dropout_forward(
    x: Tensor, rate: float, mode: Mode, rng: np.random.Generator | None
) -> tuple[Tensor, Tensor]:
    """Inverted dropout; returns (output, scaled mask used for backward)."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode is Mode.INFER or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ParameterError("dropout in train mode needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def batchnorm_forward(x: Tensor, state: LayerState, desc: LayerDescriptor, mode: Mode) -> Tensor:
    """Normalize per channel (last axis) by batch stats (train) or running stats (infer)."""
    gamma, beta = state.params["gamma"], state.params["beta"]
    axes = tuple(range(x.ndim - 1))
    if mode is Mode.TRAIN:
        if x.shape[0] < 2:
            raise ParameterError("batch norm in train mode needs batch size >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + desc.epsilon)
        xhat = (x - mean) * inv_std
        m = desc.momentum
        state.running_stats["mean"] = m * state.running_stats["mean"] + (1.0 - m) * mean
        state.running_stats["var"] = m * state.running_stats["var"] + (1.0 - m) * var
    else:
        mean = state.running_stats["mean"]
        var = state.running_stats["var"]
        inv_std = 1.0 / np.sqrt(var + desc.epsilon)
        xhat = (x - mean) * inv_std
    state.cache = {"xhat": xhat, "inv_std": inv_std, "mode": mode}
    return gamma * xhat + beta


def batchnorm_backward(upstream: Tensor, state: LayerState) -> Tensor:
    gamma = state.params["gamma"]
    xhat, inv_std, mode = state.cache["xhat"], state.cache["inv_std"], state.cache["mode"]
    axes = tuple(range(upstream.ndim - 1))
    state.grads["gamma"] = (upstream * xhat).sum(axis=axes)
    state.grads["beta"] = upstream.sum(axis=axes)
    dxhat = upstream * gamma
    if mode is Mode.INFER:
        # Running stats are constants at inference.
        return dxhat * inv_std
    return inv_std * (
        dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).mean(axis=axes)
    )


def dense_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"dense expects (n, {weights.shape[0]}) input, got {x.shape}"
        )
    return matmul(x, weights) + bias


def flatten(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"flatten expects (n, h, w, c), got {x.shape}")
    return x.reshape(x.shape[0], -1)


def layer_output_shape(desc: LayerDescriptor, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape of a layer, validating that it fits."""
    kind = desc.kind
    if kind == "Conv2D":
        h, w, _ = in_shape
        kh, kw = desc.kernel
        if kh > h or kw > w:
            raise DimensionError(f"Conv2D kernel {desc.kernel} does not fit input {in_shape}")
        return (h - kh + 1, w - kw + 1, desc.filters)
    if kind == "MaxPool2x2":
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise DimensionError(f"MaxPool2x2 needs h, w >= 2, got {in_shape}")
        return (h // 2, w // 2, c)
    if kind == "Flatten":
        return (int(np.prod(in_shape)),)
    if kind == "Dense":
        if len(in_shape) != 1:
            raise DimensionError(f"Dense needs flat input, got {in_shape}")
        return (desc.units,)
    if kind == "Softmax" and (len(in_shape) != 1 or in_shape[0] < 2):
        raise DimensionError(f"Softmax needs flat input with >= 2 classes, got {in_shape}")
    return in_shape


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_layer_state(
    desc: LayerDescriptor, in_shape: tuple[int, ...], rng: np.random.Generator
) -> LayerState:
    """Glorot-uniform weights, zero biases, unit gamma / zero beta."""
    state = LayerState()
    if desc.kind == "Conv2D":
        kh, kw = desc.kernel
        cin = in_shape[-1]
        fan_in, fan_out = kh * kw * cin, kh * kw * desc.filters
        state.params["kernels"] = glorot_uniform(rng, (kh, kw, cin, desc.filters), fan_in, fan_out)
        state.params["bias"] = np.zeros(desc.filters)
    elif desc.kind == "Dense":
        f = in_shape[0]
        state.params["weights"] = glorot_uniform(rng, (f, desc.units), f, desc.units)
        state.params["bias"] = np.zeros(desc.units)
    elif desc.kind == "BatchNorm":
        c = in_shape[-1]
        state.params["gamma"] = np.ones(c)
        state.params["beta"] = np.zeros(c)
        state.running_stats["mean"] = np.zeros(c)
        state.running_stats["var"] = np.ones(c)
    return state


def layer_forward(
    desc: LayerDescriptor,
    state: LayerState,
    x: Tensor,
    mode: Mode,
    rng: np.random.Generator | None = None,
) -> Tensor:
    kind = desc.kind
    if kind == "Conv2D":
        state.cache = {"x": x}
        return conv2d_valid(x, state.params["kernels"], state.params["bias"])
    if kind == "MaxPool2x2":
        out, argmax = maxpool2x2(x)
        state.cache = {"argmax": argmax, "in_shape": x.shape}
        return out
    if kind == "ReLU":
        state.cache = {"x": x}
        return relu(x)
    if kind == "Dropout":
        out, mask = dropout_forward(x, desc.rate, mode, rng)
        state.cache = {"mask": mask}
        return out
    if kind == "BatchNorm":
        return batchnorm_forward(x, state, desc, mode)
    if kind == "Flatten":
        state.cache = {"in_shape": x.shape}
        return flatten(x)
    if kind == "Dense":
        state.cache = {"x": x}
        return dense_forward(x, state.params["weights"], state.params["bias"])
    if kind == "Softmax":
        probs = softmax(x)
        state.cache = {"probs": probs}
        return probs
    raise ParameterError(f"unknown layer kind {kind!r}")


def layer_backward(desc: LayerDescriptor, state: LayerState, upstream: Tensor) -> Tensor:
    if not state.cache:
        raise StateError(f"{desc.kind} backward called before forward")
    kind = desc.kind
    if kind == "Conv2D":
        dx, dk, db = conv2d_grads(state.cache["x"], state.params["kernels"], upstream)
        state.grads["kernels"] = dk
        state.grads["bias"] = db
        return dx
    if kind == "MaxPool2x2":
        return maxpool2x2_backward(state.cache["argmax"], upstream, state.cache["in_shape"])
    if kind == "ReLU":
        return relu_backward(upstream, state.cache["x"])
    if kind == "Dropout":
        return upstream * state.cache["mask"]
    if kind == "BatchNorm":
        return batchnorm_backward(upstream, state)
    if kind == "Flatten":
        return upstream.reshape(state.cache["in_shape"])
    if kind == "Dense":
        x = state.cache["x"]
        state.grads["weights"] = matmul(x.T, upstream)
        state.grads["bias"] = upstream.sum(axis=0)
        return matmul(upstream, state.params["weights"].T)
    if kind == "Softmax":
        return softmax_backward(upstream, state.cache["probs"])
    raise ParameterError(f"unknown layer kind {kind!r}")
