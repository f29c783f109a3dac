"""
Neural network layers on top of the autodiff ops
Linear, 1x1 convolution with batch norm / ReLU / dropout, spatial average pooling and concatenation.
"""

import logging
from typing import Dict, Optional, Sequence

import numpy as np

from ..errors import ConfigError, DimensionError
from . import ops
from .tensor import Tensor, default_dtype, record

logger = logging.getLogger(__name__)

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def init_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True, name=name)


class Module:
    """Holds named parameters and non-trainable buffers."""

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for attr, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                params[value.name or attr] = value
            elif isinstance(value, Module):
                params.update(value.parameters())
        return params

    def buffers(self) -> Dict[str, np.ndarray]:
        found: Dict[str, np.ndarray] = {}
        for value in vars(self).values():
            if isinstance(value, Module):
                found.update(value.buffers())
        return found


class Linear(Module):
    """y = x W + b with W stored as (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, name: str):
        self.name = name
        self.weight = init_uniform(rng, (in_features, out_features), in_features, f"{name}.weight")
        self.bias = init_uniform(rng, (out_features,), in_features, f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise DimensionError(f"{self.name} expects width {self.weight.shape[0]}, got input {x.shape}")
        return ops.add(ops.matmul(x, self.weight), self.bias)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, train_mode: bool) -> Tensor:
    """
    Per-channel batch norm over (batch, positions) for x of shape (B, C, P).

    Running statistics are updated in place only in train mode.
    """
    if x.ndim != 3 or x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batch_norm expects (B, {gamma.shape[0]}, P), got {x.shape}")
    g = gamma.data.reshape(1, -1, 1)
    b = beta.data.reshape(1, -1, 1)

    if not train_mode:
        inv_std = 1.0 / np.sqrt(running_var.reshape(1, -1, 1) + BN_EPS)
        xhat = (x.data - running_mean.reshape(1, -1, 1)) * inv_std
        out = g * xhat + b

        def _eval_backward(grad):
            return (grad * g * inv_std, (grad * xhat).sum(axis=(0, 2)), grad.sum(axis=(0, 2)))

        return record("batch_norm", (x, gamma, beta), out, _eval_backward)

    count = x.shape[0] * x.shape[2]
    mu = x.data.mean(axis=(0, 2), keepdims=True)
    var = x.data.var(axis=(0, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu) * inv_std
    out = g * xhat + b

    unbiased = var.reshape(-1) * (count / max(count - 1, 1))
    running_mean *= 1.0 - BN_MOMENTUM
    running_mean += BN_MOMENTUM * mu.reshape(-1)
    running_var *= 1.0 - BN_MOMENTUM
    running_var += BN_MOMENTUM * unbiased

    def _train_backward(grad):
        dxhat = grad * g
        dx = (inv_std / count) * (
            count * dxhat
            - dxhat.sum(axis=(0, 2), keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
        )
        return (dx, (grad * xhat).sum(axis=(0, 2)), grad.sum(axis=(0, 2)))

    return record("batch_norm", (x, gamma, beta), out, _train_backward)


class Conv1x1Block(Module):
    """1x1 convolution over a (B, C_in, P) grid followed by batch norm, ReLU and dropout."""

    def __init__(self, in_channels: int, out_channels: int, dropout: float,
                 rng: np.random.Generator, name: str):
        self.name = name
        self.dropout = dropout
        self.weight = init_uniform(rng, (out_channels, in_channels), in_channels, f"{name}.weight")
        self.bias = init_uniform(rng, (out_channels, 1), in_channels, f"{name}.bias")
        self.gamma = Tensor(np.ones(out_channels), requires_grad=True, name=f"{name}.bn.gamma")
        self.beta = Tensor(np.zeros(out_channels), requires_grad=True, name=f"{name}.bn.beta")
        self.running_mean = np.zeros(out_channels, dtype=default_dtype())
        self.running_var = np.ones(out_channels, dtype=default_dtype())

    def buffers(self) -> Dict[str, np.ndarray]:
        return {
            f"{self.name}.bn.running_mean": self.running_mean,
            f"{self.name}.bn.running_var": self.running_var,
        }

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator], train_mode: bool) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.weight.shape[1]:
            raise DimensionError(f"{self.name} expects (B, {self.weight.shape[1]}, P), got {x.shape}")
        h = ops.add(ops.matmul(self.weight, x), self.bias)
        h = batch_norm(h, self.gamma, self.beta, self.running_mean, self.running_var, train_mode)
        h = ops.relu(h)
        return ops.dropout(h, self.dropout, rng, train_mode)


def avgpool_spatial(x: Tensor) -> Tensor:
    """Mean over the trailing position axis: (B, C, P) -> (B, C)."""
    return ops.mean(x, axis=-1)


def layer_forward(kind: str, inputs, params: Optional[Dict[str, Tensor]] = None,
                  train_mode: bool = False, rng: Optional[np.random.Generator] = None,
                  dropout: float = 0.0) -> Tensor:
    """
    Functional entry point for a single layer.

    kind: linear | conv1x1-bn-relu-dropout | avgpool-spatial | concat.
    For the conv block `params` carries weight, bias, gamma, beta and the
    numpy running statistics under running_mean / running_var.
    """
    params = params or {}
    if kind == "linear":
        x = inputs
        weight, bias = params["weight"], params["bias"]
        if x.shape[-1] != weight.shape[0]:
            raise DimensionError(f"linear expects width {weight.shape[0]}, got input {x.shape}")
        return ops.add(ops.matmul(x, weight), bias)
    if kind == "conv1x1-bn-relu-dropout":
        x = inputs
        weight = params["weight"]
        if x.ndim != 3 or x.shape[1] != weight.shape[1]:
            raise DimensionError(f"conv1x1 expects (B, {weight.shape[1]}, P), got {x.shape}")
        h = ops.add(ops.matmul(weight, x), params["bias"])
        h = batch_norm(h, params["gamma"], params["beta"], params["running_mean"], params["running_var"], train_mode)
        return ops.dropout(ops.relu(h), dropout, rng, train_mode)
    if kind == "avgpool-spatial":
        return avgpool_spatial(inputs)
    if kind == "concat":
        return ops.concat(list(inputs), axis=-1)
    raise ConfigError(f"unknown layer kind: {kind}")
