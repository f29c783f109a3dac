"""
Training objectives
Cross-entropy over cosine logits in the pair, attribute and object spaces, plus the
seen and hallucinated-unseen composition losses and their weighted sum.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, default_dtype
from .config import LossConfig, UNSEEN_ANCHOR_MODES
from .errors import ConfigError, ContractError, NumericError, VocabularyError

logger = logging.getLogger(__name__)

MASKED_LOGIT = -1e9
COMPONENTS = ("cls", "attr", "obj", "seen", "unseen")


@dataclass
class LossWeights:
    alpha1: float = 0.5
    alpha2: float = 0.5
    alpha3: float = 0.05
    alpha4: float = 0.05

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3", "alpha4"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")

    @classmethod
    def from_config(cls, config: LossConfig) -> "LossWeights":
        return cls(config.alpha1, config.alpha2, config.alpha3, config.alpha4)


@dataclass
class LossTargets:
    """Integer targets for one batch of triplets."""
    pair: np.ndarray         # anchor pair, index into the seen pairs
    attr: np.ndarray         # anchor attribute, index into the attribute vocabulary
    obj: np.ndarray
    halluc_attr: np.ndarray  # attribute of the object mate
    halluc_obj: np.ndarray   # object of the attribute mate
    halluc_seen: np.ndarray  # index into the seen pairs, -1 when the pair is unseen
    halluc_all: Optional[np.ndarray] = None  # index into the full attribute x object grid


def _check_targets(targets: np.ndarray, count: int, what: str, error_cls=ContractError) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= count):
        raise error_cls(f"{what} target outside the anchor set of size {count}")
    return targets


def _zero() -> Tensor:
    return Tensor(np.zeros((), dtype=default_dtype()))


def l_cls(v_pair: Tensor, seen_anchors: Tensor, targets: np.ndarray, delta: float) -> Tensor:
    """Main-branch classification of label embeddings against the OCN anchors of the seen pairs."""
    targets = _check_targets(targets, seen_anchors.shape[0], "pair")
    return ops.cross_entropy(ops.cosine_logits(v_pair, seen_anchors, delta), targets)


def l_attr(v_attr_projected: Tensor, attr_anchors: Tensor, targets: np.ndarray, delta: float) -> Tensor:
    targets = _check_targets(targets, attr_anchors.shape[0], "attribute", VocabularyError)
    return ops.cross_entropy(ops.cosine_logits(v_attr_projected, attr_anchors, delta), targets)


def l_obj(v_obj_projected: Tensor, obj_anchors: Tensor, targets: np.ndarray, delta: float) -> Tensor:
    targets = _check_targets(targets, obj_anchors.shape[0], "object", VocabularyError)
    return ops.cross_entropy(ops.cosine_logits(v_obj_projected, obj_anchors, delta), targets)


def l_seen(composed_seen: Tensor, seen_anchors: Tensor, targets: np.ndarray, delta: float) -> Tensor:
    """Composition of the anchor's own disentangled features, classified over the seen pairs."""
    return l_cls(composed_seen, seen_anchors, targets, delta)


def l_unseen(composed_unseen: Tensor, seen_anchors: Tensor, target_anchors: Tensor,
             target_seen: np.ndarray, delta: float, mode: str = "seen_plus_target",
             all_anchors: Optional[Tensor] = None, target_all: Optional[np.ndarray] = None) -> Tensor:
    """
    Classification of the hallucinated composition against its pair anchor.

    seen_plus_target: seen anchors plus one extra column per row holding the
    hallucinated pair's own anchor; the extra column is masked out when the
    pair is already seen. all_pairs: every attribute x object anchor.
    seen_only: rows whose hallucinated pair is unseen are dropped.
    """
    if mode not in UNSEEN_ANCHOR_MODES:
        raise ConfigError(f"unknown unseen_anchors mode: {mode}")
    num_seen = seen_anchors.shape[0]
    target_seen = np.asarray(target_seen, dtype=np.int64)
    if target_seen.size and target_seen.max() >= num_seen:
        raise ContractError(f"hallucinated target outside the seen set of size {num_seen}")

    if mode == "all_pairs":
        if all_anchors is None or target_all is None:
            raise ContractError("all_pairs mode needs the full anchor table and its targets")
        targets = _check_targets(target_all, all_anchors.shape[0], "hallucinated pair", VocabularyError)
        return ops.cross_entropy(ops.cosine_logits(composed_unseen, all_anchors, delta), targets)

    if mode == "seen_only":
        rows = np.flatnonzero(target_seen >= 0)
        if rows.size == 0:
            return _zero()
        picked = ops.getitem(composed_unseen, rows)
        return ops.cross_entropy(ops.cosine_logits(picked, seen_anchors, delta), target_seen[rows])

    seen_logits = ops.cosine_logits(composed_unseen, seen_anchors, delta)
    own = ops.pairwise_cosine(composed_unseen, target_anchors, delta)
    own = ops.reshape(own, (own.shape[0], 1))
    logits = ops.concat([seen_logits, own], axis=-1)
    is_seen = target_seen >= 0
    mask = np.zeros(logits.shape, dtype=default_dtype())
    mask[is_seen, num_seen] = MASKED_LOGIT
    targets = np.where(is_seen, target_seen, num_seen)
    return ops.cross_entropy(ops.add(logits, mask), targets)


def total_loss(components: Mapping[str, Tensor], weights: LossWeights) -> Tensor:
    """L_cls + a1 L_attr + a2 L_obj + a3 L_seen + a4 L_unseen."""
    missing = [name for name in COMPONENTS if name not in components]
    if missing:
        raise ContractError(f"missing loss components: {missing}")
    for name in COMPONENTS:
        if not np.all(np.isfinite(components[name].data)):
            raise NumericError(f"loss component {name} is not finite")
    total = components["cls"]
    for name, alpha in zip(COMPONENTS[1:], (weights.alpha1, weights.alpha2, weights.alpha3, weights.alpha4)):
        total = ops.add(total, ops.mul(components[name], float(alpha)))
    return total


def compute_losses(model, outputs, targets: LossTargets, seen_anchors: Tensor, weights: LossWeights,
                   unseen_mode: str = "seen_plus_target", train_mode: bool = True) -> Tuple[Tensor, Dict[str, Tensor]]:
    """All five components for a forward pass of `CompositionNet.forward_triplets`."""
    delta = model.config.delta
    halluc_anchors = model.ocn_compose(
        ops.getitem(model.attr_table, np.asarray(targets.halluc_attr, dtype=np.int64)),
        ops.getitem(model.obj_table, np.asarray(targets.halluc_obj, dtype=np.int64)),
        train_mode,
    )
    all_anchors = None
    if unseen_mode == "all_pairs":
        grid = [(a, o) for a in model.attributes for o in model.objects]
        all_anchors = model.pair_anchors(grid, train_mode)

    components = {
        "cls": l_cls(outputs.v_pair, seen_anchors, targets.pair, delta),
        "attr": l_attr(outputs.attr_projected, model.attr_table, targets.attr, delta),
        "obj": l_obj(outputs.obj_projected, model.obj_table, targets.obj, delta),
        "seen": l_seen(outputs.composed_seen, seen_anchors, targets.pair, delta),
        "unseen": l_unseen(
            outputs.composed_unseen, seen_anchors, halluc_anchors, targets.halluc_seen, delta,
            mode=unseen_mode, all_anchors=all_anchors, target_all=targets.halluc_all,
        ),
    }
    return total_loss(components, weights), components
