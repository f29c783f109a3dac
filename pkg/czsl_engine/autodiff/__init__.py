"""
Minimal tensor library with reverse-mode automatic differentiation
"""

from .tensor import Tape, Tensor, backward, default_dtype, precision
from .optim import Adam, AdamState, adam_step, step_decay
from . import ops, layers

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "default_dtype",
    "precision",
    "Adam",
    "AdamState",
    "adam_step",
    "step_decay",
    "ops",
    "layers",
]
