"""
Finite-difference gradient checking in float64 shadow mode
"""

from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, precision

FD_STEP = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ||a - n|| / max(||a|| + ||n||, 1e-12)."""
    diff = np.linalg.norm(analytic - numeric)
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(diff / max(scale, 1e-12))


def numeric_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], index: int,
                     step: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar `fn` with respect to `arrays[index]`."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    with precision(np.float64):
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = fn(*[Tensor(a) for a in base]).item()
            flat[i] = original - step
            down = fn(*[Tensor(a) for a in base]).item()
            flat[i] = original
            gflat[i] = (up - down) / (2.0 * step)
    return grad


def analytic_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> Sequence[np.ndarray]:
    with precision(np.float64):
        inputs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        with Tape() as tape:
            loss = fn(*inputs)
        backward(tape, loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                    step: float = FD_STEP) -> Dict[int, float]:
    """
    Compare tape gradients against central differences for every input.

    `fn` must be deterministic (reseed any dropout rng inside it).
    Returns the relative error per input index.
    """
    analytic = analytic_gradients(fn, arrays)
    return {
        i: relative_error(analytic[i], numeric_gradient(fn, arrays, i, step))
        for i in range(len(arrays))
    }
