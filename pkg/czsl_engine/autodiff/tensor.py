"""
Tensor and tape for reverse-mode automatic differentiation
Operations executed inside an active `Tape` are recorded in creation order;
`backward` replays them in reverse to populate gradients.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ContractError, NumericError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_DTYPE_STACK: List[np.dtype] = [np.dtype(np.float32)]
_TAPE_STACK: List["Tape"] = []


def default_dtype() -> np.dtype:
    """dtype used for every tensor created in the current precision scope."""
    return _DTYPE_STACK[-1]


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Switch storage precision, e.g. float64 shadow mode for gradient checks."""
    _DTYPE_STACK.append(np.dtype(dtype))
    try:
        yield
    finally:
        _DTYPE_STACK.pop()


class Tensor:
    """
    Shape-tagged dense value with an optional gradient.

    Tensors are never mutated by operations; every op returns a new tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar, resolved lazily to avoid a circular import with ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(as_tensor(other), self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


def as_tensor(value: Union["Tensor", ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeNode:
    """One recorded operation."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class Tape:
    """
    Ordered record of differentiable operations.

    Use as a context manager; nested tapes record into the innermost one.
    """
    nodes: List[TapeNode] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def op_names(self) -> List[str]:
        return [node.op for node in self.nodes]


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap `out_data` in a tensor and register the op on the active tape when any input needs grads."""
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires_grad)
    tape = active_tape()
    if requires_grad and tape is not None:
        tape.nodes.append(TapeNode(op, tuple(inputs), out, backward))
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so that `grad` matches `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape: Tape, loss: Tensor) -> None:
    """
    Populate `.grad` of every tensor on the tape that requires gradients.

    Gradients accumulate into existing `.grad` buffers; call `zero_grad` on
    parameters between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite")

    grads = {id(loss): np.ones_like(loss.data)}
    touched = {id(loss): loss}
    for node in reversed(tape.nodes):
        g_out = grads.get(id(node.output))
        if g_out is None:
            continue
        for tensor, g_in in zip(node.inputs, node.backward(g_out)):
            if g_in is None or not tensor.requires_grad:
                continue
            g_in = unbroadcast(np.asarray(g_in, dtype=tensor.data.dtype), tensor.shape)
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = g_in
                touched[key] = tensor

    for key, tensor in touched.items():
        if not tensor.requires_grad:
            continue
        tensor.grad = grads[key] if tensor.grad is None else tensor.grad + grads[key]
