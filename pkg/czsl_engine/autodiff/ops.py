"""
Differentiable tensor operations
Each op computes its forward value with numpy and registers a backward rule on the active tape.
"""

from typing import Optional, Sequence

import numpy as np

from ..errors import DegenerateVectorError, DimensionError, NumericError
from .tensor import Tensor, as_tensor, record

NORM_EPS = 1e-8


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast as batch."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"matmul batch dimensions disagree: {a.shape} and {b.shape}") from e

    def _backward(g):
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return record("matmul", (a, b), out, _backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record("transpose", (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inverse),))


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    return record("swapaxes", (x,), np.swapaxes(x.data, a1, a2), lambda g: (np.swapaxes(g, a1, a2),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"cannot reshape {original} into {tuple(shape)}") from e
    return record("reshape", (x,), out, lambda g: (g.reshape(original),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", (x,), out, _backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", (x,), x.data * mask, lambda g: (g * mask,))


def getitem(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; backward scatters with `np.add.at`."""
    out = x.data[index]

    def _backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return record("getitem", (x,), np.array(out, copy=True), _backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", tensors, out, _backward)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} received non-finite input")


def scaled_softmax(x: Tensor, axis: int = -1, inverse_temperature: float = 1.0,
                   allow_zero: bool = False) -> Tensor:
    """
    softmax(lambda * x) along `axis`, stabilized by max subtraction.

    `inverse_temperature == 0` yields a uniform output and is accepted only
    when `allow_zero` is set (debug and test paths).
    """
    lam = float(inverse_temperature)
    if lam < 0 or (lam == 0 and not allow_zero):
        raise NumericError(f"softmax inverse temperature must be > 0, got {lam}")
    _check_finite(x.data, "scaled_softmax")
    z = lam * x.data
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (lam * y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("scaled_softmax", (x,), y, _backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x.data, "log_softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - logsum
    p = np.exp(y)

    def _backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", (x,), y, _backward)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """
    Unit-normalize every slice along `axis`.

    Slices with norm <= 1e-8 raise DegenerateVectorError; the epsilon never
    changes the output direction.
    """
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if np.any(norm <= NORM_EPS):
        raise DegenerateVectorError(f"cannot normalize a near-zero slice of a tensor with shape {x.shape}")
    y = x.data / norm

    def _backward(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return record("l2_normalize", (x,), y, _backward)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], train_mode: bool) -> Tensor:
    """Inverted dropout: identity in eval mode, survivors scaled by 1/(1-p) in train mode."""
    if not 0.0 <= p < 1.0:
        raise NumericError(f"dropout probability must be in [0, 1), got {p}")
    if not train_mode or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return record("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer `targets` under row-wise softmax of `logits` (B x C)."""
    if logits.ndim != 2 or len(targets) != logits.shape[0]:
        raise DimensionError(f"cross_entropy expects (B, C) logits for {len(targets)} targets, got {logits.shape}")
    logp = log_softmax(logits, axis=-1)
    picked = getitem(logp, (np.arange(len(targets)), np.asarray(targets, dtype=np.int64)))
    return mul(mean(picked), -1.0)


def cosine_logits(v: Tensor, anchors: Tensor, delta: float) -> Tensor:
    """delta * cos(v_b, anchor_c) for every row of `v` (B x d) against every anchor (C x d)."""
    if v.shape[-1] != anchors.shape[-1]:
        raise DimensionError(f"cosine logits need equal widths, got {v.shape} and {anchors.shape}")
    vn = l2_normalize(v, axis=-1)
    an = l2_normalize(anchors, axis=-1)
    return mul(matmul(vn, transpose(an)), float(delta))


def pairwise_cosine(v: Tensor, w: Tensor, delta: float) -> Tensor:
    """Row-aligned delta * cos(v_b, w_b) for two (B x d) tensors; returns (B,)."""
    if v.shape != w.shape:
        raise DimensionError(f"pairwise cosine needs equal shapes, got {v.shape} and {w.shape}")
    vn = l2_normalize(v, axis=-1)
    wn = l2_normalize(w, axis=-1)
    return mul(sum(mul(vn, wn), axis=-1), float(delta))


def weighted_positions(features: Tensor, weights: Tensor) -> Tensor:
    """Weighted sum over spatial positions: (B, n, P) x (B, P) -> (B, n)."""
    if features.ndim != 3 or weights.ndim != 2 or features.shape[-1] != weights.shape[-1]:
        raise DimensionError(f"position weighting needs (B,n,P) and (B,P), got {features.shape} and {weights.shape}")
    column = reshape(weights, (weights.shape[0], weights.shape[1], 1))
    out = matmul(features, column)
    return reshape(out, (features.shape[0], features.shape[1]))

