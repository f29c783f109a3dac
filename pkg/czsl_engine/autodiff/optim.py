"""
Adam with decoupled weight decay, parameter groups and a step learning-rate schedule.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter moment buffers plus the shared step counter and hyperparameters."""
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-5
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              lr: Optional[float] = None) -> Dict[str, np.ndarray]:
    """
    One bias-corrected Adam update with decoupled weight decay.

    Returns new parameter arrays; `state` is advanced in place.
    """
    lr = state.lr if lr is None else lr
    if set(params) != set(grads):
        raise ContractError("parameters and gradients name different tensors")
    for name in params:
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is not None and m.shape != p.shape:
            raise ContractError(f"moment buffer for {name} has shape {m.shape}, parameter has {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t

    updated = {}
    for name in sorted(params):
        p, g = params[name], grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        updated[name] = (p - lr * state.weight_decay * p - lr * step).astype(p.dtype)
    return updated


def step_decay(base_lr: float, epoch: int, milestones: Sequence[int], factor: float = 0.1) -> float:
    """Learning rate for a 0-based `epoch`: multiplied by `factor` once per passed milestone."""
    passed = sum(1 for milestone in milestones if epoch >= milestone)
    return base_lr * factor ** passed


@dataclass
class ParamGroup:
    name: str
    params: Dict[str, Tensor]
    base_lr: float
    state: AdamState


class Adam:
    """
    Adam over named parameter groups (model weights and the word-embedding table).

    Groups with a zero learning rate are left untouched.
    """

    def __init__(self, groups: Dict[str, Dict[str, Tensor]], lrs: Dict[str, float],
                 weight_decay: float = 5e-5, betas=(0.9, 0.999), eps: float = 1e-8,
                 milestones: Sequence[int] = (), decay: float = 0.1):
        self.milestones = list(milestones)
        self.decay = decay
        self.groups: List[ParamGroup] = []
        for name in groups:
            state = AdamState(lr=lrs[name], beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)
            self.groups.append(ParamGroup(name, groups[name], lrs[name], state))
        self.epoch = 0
        logger.info(f"Adam groups: {[(g.name, len(g.params), g.base_lr) for g in self.groups]}")

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch
        for group in self.groups:
            group.state.lr = step_decay(group.base_lr, epoch, self.milestones, self.decay)

    def current_lr(self, group: str = "model") -> float:
        for g in self.groups:
            if g.name == group:
                return g.state.lr
        raise ContractError(f"no parameter group named {group}")

    def zero_grad(self) -> None:
        for group in self.groups:
            for tensor in group.params.values():
                tensor.zero_grad()

    def step(self) -> None:
        for group in self.groups:
            if group.state.lr == 0.0:
                continue
            params = {name: t.data for name, t in group.params.items()}
            grads = {
                name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in group.params.items()
            }
            updated = adam_step(params, grads, group.state)
            for name, tensor in group.params.items():
                tensor.data = updated[name]
