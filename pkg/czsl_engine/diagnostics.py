"""
Disentanglement diagnostics
Prototype features, nearest-prototype classification, retrieval with hallucinated
compositions, and attention maps dumped as 7x7 grids.
"""

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff.tensor import Tensor
from .data.features import FeatureStore
from .data.split import SplitSpec
from .data.synthetic import BlockMask, attention_mass_on_mask
from .data.triplets import (
    LabeledSample,
    TripletIndex,
    TripletSample,
    find_source_triplet,
    mates_for,
    sample_triplet,
    stack_triplets,
)
from .errors import DataError, MateNotFoundError, VocabularyError

logger = logging.getLogger(__name__)

Pair = Tuple[str, str]
GRID = 7


@dataclass
class Prototypes:
    attr: Dict[str, np.ndarray] = field(default_factory=dict)
    obj: Dict[str, np.ndarray] = field(default_factory=dict)
    skipped_anchors: int = 0


def _unit(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norm, 1e-12)


def prototype_features(model, store: FeatureStore, split: SplitSpec, rng: np.random.Generator,
                       batch_size: int = 64) -> Prototypes:
    """Mean projected attribute (object) feature over training samples, each through a sampled triplet."""
    index = TripletIndex(split.train_ids, split.labels)
    triplets: List[TripletSample] = []
    skipped = 0
    for sid in sorted(split.train_ids):
        try:
            triplets.append(sample_triplet(sid, index, rng))
        except MateNotFoundError:
            skipped += 1
    if skipped:
        logger.warning(f"Prototype features: skipped {skipped} anchors without mates")

    sums_a: Dict[str, np.ndarray] = {}
    sums_o: Dict[str, np.ndarray] = {}
    counts_a: Dict[str, int] = defaultdict(int)
    counts_o: Dict[str, int] = defaultdict(int)
    for start in range(0, len(triplets), batch_size):
        chunk = triplets[start:start + batch_size]
        out = model.forward_triplets(*(Tensor(x) for x in stack_triplets(store, chunk)), train_mode=False)
        pa, po = out.attr_projected.data.astype(np.float64), out.obj_projected.data.astype(np.float64)
        for t, va, vo in zip(chunk, pa, po):
            sums_a[t.anchor.attr] = sums_a.get(t.anchor.attr, 0.0) + va
            sums_o[t.anchor.obj] = sums_o.get(t.anchor.obj, 0.0) + vo
            counts_a[t.anchor.attr] += 1
            counts_o[t.anchor.obj] += 1

    protos = Prototypes(
        attr={a: sums_a[a] / counts_a[a] for a in sorted(sums_a)},
        obj={o: sums_o[o] / counts_o[o] for o in sorted(sums_o)},
        skipped_anchors=skipped,
    )
    missing_a = [a for a in model.attributes if a not in protos.attr]
    missing_o = [o for o in model.objects if o not in protos.obj]
    if missing_a or missing_o:
        logger.warning(f"No prototype for {len(missing_a)} attributes and {len(missing_o)} objects (no samples)")
    return protos


def classify_by_prototypes(model, store: FeatureStore, sample_ids: Sequence[str], prototypes: Prototypes,
                           k: int = 1, batch_size: int = 128) -> List[Tuple[List[str], List[str]]]:
    """Top-k attributes and objects per sample by cosine to the prototypes; samples are paired with themselves."""
    attr_names, obj_names = list(prototypes.attr), list(prototypes.obj)
    if not attr_names or not obj_names:
        raise DataError("prototype classification needs at least one attribute and one object prototype")
    pa = _unit(np.stack([prototypes.attr[a] for a in attr_names]))
    po = _unit(np.stack([prototypes.obj[o] for o in obj_names]))
    results = []
    for start in range(0, len(sample_ids), batch_size):
        batch = list(sample_ids[start:start + batch_size])
        feats = model.self_paired(Tensor(store.stack(batch)))
        va = _unit(model.project_attr(feats.v_attr).data.astype(np.float64))
        vo = _unit(model.project_obj(feats.v_obj).data.astype(np.float64))
        top_a = np.argsort(-(va @ pa.T), axis=1, kind="stable")[:, :k]
        top_o = np.argsort(-(vo @ po.T), axis=1, kind="stable")[:, :k]
        for ra, ro in zip(top_a, top_o):
            results.append(([attr_names[j] for j in ra], [obj_names[j] for j in ro]))
    return results


def prototype_accuracy(model, store: FeatureStore, split: SplitSpec, prototypes: Prototypes,
                       which: str = "val", ks: Sequence[int] = (1, 3)) -> Dict[str, float]:
    ids = list(split.sample_ids(which))
    if not ids:
        raise DataError(f"split {which!r} has no samples")
    ranked = classify_by_prototypes(model, store, ids, prototypes, k=max(ks))
    out = {}
    for k in ks:
        out[f"attr@{k}"] = float(np.mean([split.labels[s][0] in ra[:k] for s, (ra, _) in zip(ids, ranked)]))
        out[f"obj@{k}"] = float(np.mean([split.labels[s][1] in ro[:k] for s, (_, ro) in zip(ids, ranked)]))
    logger.info(f"Prototype accuracy on {which}: " + " ".join(f"{k}={v:.4f}" for k, v in out.items()))
    return out


def retrieve_by_hallucination(model, store: FeatureStore, split: SplitSpec, pair: Pair, top_n: int,
                              which: str = "test", rng: Optional[np.random.Generator] = None,
                              batch_size: int = 128) -> List[Tuple[str, float]]:
    """
    Rank `which` samples by cosine between a hallucinated composition of `pair`
    and each sample's composed seen embedding. Returns (sample_id, cosine), best first.
    """
    if pair[0] not in model.attr_index or pair[1] not in model.obj_index:
        raise VocabularyError(f"pair {pair} uses tokens outside the model vocabulary")
    if top_n <= 0:
        return []
    rng = rng or np.random.default_rng(0)
    index = TripletIndex(split.train_ids, split.labels)
    source = find_source_triplet(pair, index, rng)
    out = model.forward_triplets(*(Tensor(x) for x in stack_triplets(store, [source])), train_mode=False)
    query = _unit(out.composed_unseen.data[0].astype(np.float64))

    ids = list(split.sample_ids(which))
    sims = []
    for start in range(0, len(ids), batch_size):
        feats = model.self_paired(Tensor(store.stack(ids[start:start + batch_size])))
        composed = model.compose_pair(feats.v_attr, feats.v_obj).data.astype(np.float64)
        sims.append(_unit(composed) @ query)
    sims = np.concatenate(sims) if sims else np.zeros(0)
    order = np.argsort(-sims, kind="stable")[:top_n]
    logger.info(f"Retrieved {len(order)} of {len(ids)} {which} samples for ({pair[0]}, {pair[1]}) "
                f"via anchor {source.anchor.id}")
    return [(ids[i], float(sims[i])) for i in order]


def attention_maps(model, store: FeatureStore, triplet: TripletSample, uniform: bool = False) -> Dict[str, np.ndarray]:
    """
    Position weights of both affinity passes for one triplet.

    m / m_attr / m_obj_diff come from (anchor, attribute mate); m_obj_pair /
    m_obj / m_attr_diff from (anchor, object mate). Weights named *_attr and
    m_obj index the anchor's positions, the others index the mate's.
    """
    raws = stack_triplets(store, [triplet])
    f = model.image_encode(Tensor(np.concatenate(raws, axis=0)), train_mode=False)
    grids = f.data
    feats = model.disentangle(Tensor(grids[0:1]), Tensor(grids[1:2]), Tensor(grids[2:3]), allow_uniform=uniform)
    a, o = feats.attr_maps, feats.obj_maps
    return {
        "m": a.m.data[0],
        "m_attr": a.m_other.data[0],
        "m_obj_diff": a.m_diff.data[0],
        "m_obj_pair": o.m.data[0],
        "m_obj": o.m_other.data[0],
        "m_attr_diff": o.m_diff.data[0],
    }


def attribute_mask_mass(maps: Dict[str, np.ndarray], triplet: TripletSample, masks: Dict[str, BlockMask]) -> float:
    """Mean share of attribute-path weight on the planted attribute blocks of the anchor and its attribute mate."""
    try:
        anchor_mask = masks[triplet.anchor.id].attr_blocks
        mate_mask = masks[triplet.attr_mate.id].attr_blocks
    except KeyError as e:
        raise DataError(f"no mask for sample {e.args[0]!r}") from None
    return 0.5 * (attention_mass_on_mask(maps["m_attr"], anchor_mask) + attention_mass_on_mask(maps["m"], mate_mask))


def mean_attribute_mass(model, store: FeatureStore, split: SplitSpec, masks: Dict[str, BlockMask],
                        which: str = "val", rng: Optional[np.random.Generator] = None) -> float:
    """Average attribute mask mass over a split, anchors drawn from it and mates from training."""
    rng = rng or np.random.default_rng(0)
    index = TripletIndex(split.train_ids, split.labels)
    values = []
    for sid in split.sample_ids(which):
        attr, obj = split.labels[sid]
        try:
            triplet = mates_for(LabeledSample(sid, attr, obj), index, rng)
        except MateNotFoundError:
            continue
        values.append(attribute_mask_mass(attention_maps(model, store, triplet), triplet, masks))
    if not values:
        raise DataError(f"no {which} sample has training mates")
    return float(np.mean(values))


def write_grid(path: Union[str, Path], weights: np.ndarray) -> None:
    grid = np.asarray(weights, dtype=np.float64).reshape(GRID, GRID)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in grid:
            writer.writerow([f"{v:.6f}" for v in row])
