"""
Composition network
Image encoder, label embedder, object-conditioned word composer, affinity-based
disentanglement of attribute and object features, and composition of hallucinated pairs.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .autodiff import ops
from .autodiff.layers import Conv1x1Block, Linear, Module, avgpool_spatial
from .autodiff.tensor import Tensor, as_tensor
from .config import ModelConfig
from .errors import ConfigError, ContractError, DimensionError, VocabularyError

logger = logging.getLogger(__name__)

POSITIONS = 49

Pair = Tuple[str, str]
ModelParams = Dict[str, Tensor]


@dataclass
class AffinityMaps:
    """Similarity/dissimilarity attention between two feature grids, batched as (B, 49, 49) / (B, 49)."""
    S: Tensor
    A: Tensor
    A_col: Tensor
    D: Tensor
    m: Tensor
    m_other: Tensor
    m_diff: Tensor


@dataclass
class DisentangledFeatures:
    v_attr: Tensor
    v_obj: Tensor
    v_attr_h: Tensor
    v_obj_h: Tensor
    attr_maps: AffinityMaps
    obj_maps: AffinityMaps


@dataclass
class TripletOutputs:
    v_pair: Tensor
    features: DisentangledFeatures
    attr_projected: Tensor
    obj_projected: Tensor
    composed_seen: Tensor
    composed_unseen: Tensor


def _batched(x: Tensor) -> Tensor:
    return ops.reshape(x, (1,) + x.shape) if x.ndim == 2 else x


def cos_score(v: Tensor, w: Tensor, delta: float) -> float:
    """delta * <v, w> / (|v| |w|) for two vectors."""
    v, w = as_tensor(v), as_tensor(w)
    if v.shape != w.shape or v.ndim != 1:
        raise DimensionError(f"cos_score needs two vectors of equal length, got {v.shape} and {w.shape}")
    out = ops.pairwise_cosine(ops.reshape(v, (1, -1)), ops.reshape(w, (1, -1)), delta)
    return float(out.data[0])


def classify(v: Tensor, anchors: Sequence[Tuple[object, Tensor]], delta: float) -> Dict[object, float]:
    """Softmax over cosine scores of `v` against every labelled anchor."""
    if not anchors:
        raise ContractError("classify needs at least one anchor")
    v = as_tensor(v)
    stacked = Tensor(np.stack([as_tensor(a).data for _, a in anchors]))
    logits = ops.cosine_logits(ops.reshape(v, (1, -1)), stacked, delta)
    probs = np.exp(ops.log_softmax(logits, axis=-1).data[0])
    return {label: float(p) for (label, _), p in zip(anchors, probs)}


def affinity(f: Tensor, g: Tensor, lam: float, gamma: float, allow_uniform: bool = False) -> AffinityMaps:
    """
    Cross-image attention between grids f and g, each (n, 49) or (B, n, 49).

    S_ij is the cosine between position i of f and position j of g.
    m (column sums of the row softmax) weights positions of g, m_other
    (row sums of the column softmax) weights positions of f, and m_diff
    (column sums of the row softmax of -S) weights positions of g.
    """
    f, g = _batched(f), _batched(g)
    if f.shape != g.shape or f.shape[-1] != POSITIONS:
        raise DimensionError(f"affinity needs two (B, n, {POSITIONS}) grids, got {f.shape} and {g.shape}")
    fn = ops.l2_normalize(f, axis=1)
    gn = ops.l2_normalize(g, axis=1)
    S = ops.matmul(ops.swapaxes(fn, 1, 2), gn)
    A = ops.scaled_softmax(S, axis=-1, inverse_temperature=lam, allow_zero=allow_uniform)
    A_col = ops.scaled_softmax(S, axis=-2, inverse_temperature=lam, allow_zero=allow_uniform)
    D = ops.scaled_softmax(ops.mul(S, -1.0), axis=-1, inverse_temperature=gamma, allow_zero=allow_uniform)
    return AffinityMaps(
        S=S,
        A=A,
        A_col=A_col,
        D=D,
        m=ops.sum(A, axis=-2),
        m_other=ops.sum(A_col, axis=-1),
        m_diff=ops.sum(D, axis=-2),
    )


def disentangle(f: Tensor, f_attr: Tensor, f_obj: Tensor, lam: float, gamma: float,
                allow_uniform: bool = False) -> DisentangledFeatures:
    """
    Attribute features from (f, f_attr) and object features from (f, f_obj).

    v_attr and v_obj_h never read f_obj; v_obj and v_attr_h never read f_attr.
    """
    f, f_attr, f_obj = _batched(f), _batched(f_attr), _batched(f_obj)
    a = affinity(f, f_attr, lam, gamma, allow_uniform)
    o = affinity(f, f_obj, lam, gamma, allow_uniform)
    v_attr = ops.add(ops.weighted_positions(f_attr, a.m), ops.weighted_positions(f, a.m_other))
    v_obj_h = ops.weighted_positions(f_attr, a.m_diff)
    v_obj = ops.add(ops.weighted_positions(f_obj, o.m), ops.weighted_positions(f, o.m_other))
    v_attr_h = ops.weighted_positions(f_obj, o.m_diff)
    return DisentangledFeatures(v_attr, v_obj, v_attr_h, v_obj_h, a, o)


class ProjectionHead(Module):
    """Two linear layers with ReLU and dropout between them."""

    def __init__(self, in_features: int, hidden: int, out_features: int, dropout: float,
                 rng: np.random.Generator, name: str):
        self.dropout = dropout
        self.fc1 = Linear(in_features, hidden, rng, f"{name}.fc1")
        self.fc2 = Linear(hidden, out_features, rng, f"{name}.fc2")

    def __call__(self, v: Tensor, rng: Optional[np.random.Generator], train_mode: bool) -> Tensor:
        h = ops.dropout(ops.relu(self.fc1(v)), self.dropout, rng, train_mode)
        return self.fc2(h)


class WordComposer(Module):
    """Pair embedding from attribute and object word vectors (linear, mlp or object-conditioned)."""

    def __init__(self, variant: str, d_w: int, d_emb: int, dropout: float, rng: np.random.Generator):
        if variant not in ("linear", "mlp", "object_conditioned"):
            raise ConfigError(f"unknown OCN variant: {variant}")
        self.variant = variant
        self.dropout = dropout
        if variant == "linear":
            self.fc = Linear(2 * d_w, d_emb, rng, "ocn.fc")
        elif variant == "mlp":
            self.fc1 = Linear(2 * d_w, d_emb, rng, "ocn.fc1")
            self.fc2 = Linear(d_emb, d_emb, rng, "ocn.fc2")
        else:
            self.attr_fc = Linear(d_w, d_emb, rng, "ocn.attr_fc")
            self.obj_fc = Linear(d_w, d_emb, rng, "ocn.obj_fc")
            self.joint_fc = Linear(2 * d_emb, d_emb, rng, "ocn.joint_fc")
            self.out_fc = Linear(2 * d_emb, d_emb, rng, "ocn.out_fc")

    def __call__(self, emb_attr: Tensor, emb_obj: Tensor, rng: Optional[np.random.Generator] = None,
                 train_mode: bool = False) -> Tensor:
        if emb_attr.shape != emb_obj.shape:
            raise DimensionError(f"word vectors disagree: {emb_attr.shape} and {emb_obj.shape}")
        if self.variant == "linear":
            x = ops.dropout(ops.concat([emb_attr, emb_obj], axis=-1), self.dropout, rng, train_mode)
            return self.fc(x)
        if self.variant == "mlp":
            x = ops.dropout(ops.concat([emb_attr, emb_obj], axis=-1), self.dropout, rng, train_mode)
            return self.fc2(ops.relu(self.fc1(x)))
        attr = self.attr_fc(emb_attr)
        obj = self.obj_fc(emb_obj)
        joint = ops.relu(self.joint_fc(ops.concat([attr, obj], axis=-1)))
        # object residual conditions the joint attribute representation
        return self.out_fc(ops.concat([joint, obj], axis=-1))


class CompositionNet(Module):
    """
    Full network over precomputed (n0, 49) backbone grids.

    Only the main branch (image encoder -> label embedder vs word composer)
    is used at inference; the affinity branches serve training and diagnostics.
    """

    def __init__(self, config: ModelConfig, attributes: Sequence[str], objects: Sequence[str],
                 word_vectors: Optional[Mapping[str, np.ndarray]] = None, seed: int = 0):
        self.config = config
        self.attributes = list(attributes)
        self.objects = list(objects)
        self.attr_index = {a: i for i, a in enumerate(self.attributes)}
        self.obj_index = {o: i for i, o in enumerate(self.objects)}
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng(seed + 1)

        c = config
        self.image_encoder = Conv1x1Block(c.n0, c.n, c.ie_dropout, rng, "ie")
        self.label_embedder = Linear(c.n, c.d_emb, rng, "le")
        self.word_composer = WordComposer(c.ocn_variant, c.d_w, c.d_emb, c.ocn_dropout, rng)
        self.attr_head = ProjectionHead(c.n, c.d_emb, c.d_emb, c.head_dropout, rng, "attr_head")
        self.obj_head = ProjectionHead(c.n, c.d_emb, c.d_emb, c.head_dropout, rng, "obj_head")
        self.composer = Linear(2 * c.n, c.d_emb, rng, "composer")
        self.attr_table = Tensor(self._init_words(self.attributes, word_vectors, rng), requires_grad=True, name="words.attr")
        self.obj_table = Tensor(self._init_words(self.objects, word_vectors, rng), requires_grad=True, name="words.obj")
        logger.info(
            f"Initialized composition network: n0={c.n0} n={c.n} d_emb={c.d_emb} "
            f"ocn={c.ocn_variant} attrs={len(self.attributes)} objs={len(self.objects)}"
        )

    def _init_words(self, tokens: Sequence[str], vectors: Optional[Mapping[str, np.ndarray]],
                    rng: np.random.Generator) -> np.ndarray:
        d_w = self.config.d_w
        if self.config.word_init == "random" or vectors is None:
            table = rng.standard_normal((len(tokens), d_w))
            return table / np.linalg.norm(table, axis=1, keepdims=True)
        rows = []
        for token in tokens:
            if token not in vectors:
                raise VocabularyError(f"no word vector for token {token!r}")
            vec = np.asarray(vectors[token])
            if vec.shape != (d_w,):
                raise ConfigError(f"word vector for {token!r} has dimension {vec.shape[0]}, model.d_w is {d_w}")
            rows.append(vec)
        return np.stack(rows) if rows else np.zeros((0, d_w))

    # ---- parameters ---------------------------------------------------
    def parameter_groups(self) -> Dict[str, ModelParams]:
        params = self.parameters()
        words = {k: v for k, v in params.items() if k.startswith("words.")}
        return {"model": {k: v for k, v in params.items() if k not in words}, "embeddings": words}

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {name: t.data for name, t in self.parameters().items()}
        arrays.update(self.buffers())
        return arrays

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        buffers = self.buffers()
        expected = set(params) | set(buffers)
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise ConfigError(f"checkpoint tensors do not match the model (missing {missing}, unexpected {extra})")
        for name, tensor in params.items():
            if arrays[name].shape != tensor.shape:
                raise ConfigError(f"checkpoint tensor {name} has shape {arrays[name].shape}, model expects {tensor.shape}")
            tensor.data = np.array(arrays[name], dtype=tensor.data.dtype)
        for name, buf in buffers.items():
            buf[...] = arrays[name]

    # ---- vocabulary ---------------------------------------------------
    def pair_indices(self, pairs: Sequence[Pair]) -> Tuple[np.ndarray, np.ndarray]:
        try:
            attrs = np.array([self.attr_index[a] for a, _ in pairs], dtype=np.int64)
            objs = np.array([self.obj_index[o] for _, o in pairs], dtype=np.int64)
        except KeyError as e:
            raise VocabularyError(f"pair token {e.args[0]!r} is not in the model vocabulary") from e
        return attrs, objs

    # ---- branches -----------------------------------------------------
    def image_encode(self, raw: Tensor, train_mode: bool = False) -> Tensor:
        raw = _batched(as_tensor(raw))
        if raw.shape[-1] != POSITIONS:
            raise DimensionError(f"image features need {POSITIONS} spatial positions, got {raw.shape}")
        return self.image_encoder(raw, self.dropout_rng, train_mode)

    def label_embed(self, f: Tensor) -> Tensor:
        return self.label_embedder(avgpool_spatial(_batched(f)))

    def ocn_compose(self, emb_attr: Tensor, emb_obj: Tensor, train_mode: bool = False) -> Tensor:
        return self.word_composer(emb_attr, emb_obj, self.dropout_rng, train_mode)

    def pair_anchors(self, pairs: Sequence[Pair], train_mode: bool = False) -> Tensor:
        """OCN embedding for every pair, (P, d_emb)."""
        attrs, objs = self.pair_indices(pairs)
        emb_attr = ops.getitem(self.attr_table, attrs)
        emb_obj = ops.getitem(self.obj_table, objs)
        return self.ocn_compose(emb_attr, emb_obj, train_mode)

    def project_attr(self, v: Tensor, train_mode: bool = False) -> Tensor:
        return self.attr_head(v, self.dropout_rng, train_mode)

    def project_obj(self, v: Tensor, train_mode: bool = False) -> Tensor:
        return self.obj_head(v, self.dropout_rng, train_mode)

    def compose_pair(self, v_a: Tensor, v_o: Tensor) -> Tensor:
        return self.composer(ops.concat([v_a, v_o], axis=-1))

    def disentangle(self, f: Tensor, f_attr: Tensor, f_obj: Tensor, allow_uniform: bool = False) -> DisentangledFeatures:
        lam, gamma = (0.0, 0.0) if allow_uniform else (self.config.lam, self.config.gamma)
        return disentangle(f, f_attr, f_obj, lam, gamma, allow_uniform)

    def forward_triplets(self, raw: Tensor, raw_attr: Tensor, raw_obj: Tensor, train_mode: bool = False) -> TripletOutputs:
        """All training branches for a batch of triplets, each raw input (B, n0, 49)."""
        batch = raw.shape[0]
        stacked = self.image_encode(ops.concat([raw, raw_attr, raw_obj], axis=0), train_mode)
        f = ops.getitem(stacked, slice(0, batch))
        f_attr = ops.getitem(stacked, slice(batch, 2 * batch))
        f_obj = ops.getitem(stacked, slice(2 * batch, 3 * batch))
        features = self.disentangle(f, f_attr, f_obj)
        return TripletOutputs(
            v_pair=self.label_embed(f),
            features=features,
            attr_projected=self.project_attr(features.v_attr, train_mode),
            obj_projected=self.project_obj(features.v_obj, train_mode),
            composed_seen=self.compose_pair(features.v_attr, features.v_obj),
            composed_unseen=self.compose_pair(features.v_attr_h, features.v_obj_h),
        )

    def forward_infer(self, raw: Tensor, pairs: Sequence[Pair], anchors: Optional[Tensor] = None) -> np.ndarray:
        """Cosine scores (B, P) of each image against each candidate pair; main branch only."""
        if anchors is None:
            anchors = self.pair_anchors(pairs)
        v_pair = self.label_embed(self.image_encode(raw, train_mode=False))
        return ops.cosine_logits(v_pair, anchors, self.config.delta).data

    def self_paired(self, raw: Tensor) -> DisentangledFeatures:
        """Disentangle images paired with themselves, for samples whose labels are unknown."""
        f = self.image_encode(raw, train_mode=False)
        return self.disentangle(f, f, f)
