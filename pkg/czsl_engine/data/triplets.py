"""
Triplet sampling
An anchor plus one image sharing its attribute and one sharing its object.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from ..errors import DataError, MateNotFoundError

logger = logging.getLogger(__name__)

Pair = Tuple[str, str]


@dataclass(frozen=True)
class LabeledSample:
    id: str
    attr: str
    obj: str


@dataclass(frozen=True)
class TripletSample:
    anchor: LabeledSample
    attr_mate: LabeledSample  # same attribute, different object
    obj_mate: LabeledSample   # same object, different attribute

    def hallucinated_pair(self) -> Pair:
        """Attribute of the object mate composed with the object of the attribute mate."""
        return self.obj_mate.attr, self.attr_mate.obj


class TripletIndex:
    """Training samples grouped by attribute and by object, ids sorted for reproducible draws."""

    def __init__(self, sample_ids: Sequence[str], labels: Mapping[str, Pair]):
        self.samples: Dict[str, LabeledSample] = {}
        self.by_attr: Dict[str, List[str]] = defaultdict(list)
        self.by_obj: Dict[str, List[str]] = defaultdict(list)
        for sid in sorted(sample_ids):
            try:
                attr, obj = labels[sid]
            except KeyError:
                raise DataError(f"sample {sid!r} has no label") from None
            self.samples[sid] = LabeledSample(sid, attr, obj)
            self.by_attr[attr].append(sid)
            self.by_obj[obj].append(sid)

    def __len__(self) -> int:
        return len(self.samples)

    def get(self, sample_id: str) -> LabeledSample:
        try:
            return self.samples[sample_id]
        except KeyError:
            raise DataError(f"sample {sample_id!r} is not in the training split") from None

    def attr_mates(self, anchor: LabeledSample) -> List[str]:
        return [s for s in self.by_attr[anchor.attr] if self.samples[s].obj != anchor.obj]

    def obj_mates(self, anchor: LabeledSample) -> List[str]:
        return [s for s in self.by_obj[anchor.obj] if self.samples[s].attr != anchor.attr]


def sample_triplet(anchor_id: str, index: TripletIndex, rng: np.random.Generator) -> TripletSample:
    return mates_for(index.get(anchor_id), index, rng)


def mates_for(anchor: LabeledSample, index: TripletIndex, rng: np.random.Generator) -> TripletSample:
    """Triplet around any labelled anchor, training or held-out, with mates drawn from the index."""
    anchor_id = anchor.id
    attr_mates = index.attr_mates(anchor)
    if not attr_mates:
        raise MateNotFoundError(f"no sample shares attribute {anchor.attr!r} with a different object than {anchor_id!r}")
    obj_mates = index.obj_mates(anchor)
    if not obj_mates:
        raise MateNotFoundError(f"no sample shares object {anchor.obj!r} with a different attribute than {anchor_id!r}")
    attr_mate = attr_mates[int(rng.integers(len(attr_mates)))]
    obj_mate = obj_mates[int(rng.integers(len(obj_mates)))]
    return TripletSample(anchor, index.samples[attr_mate], index.samples[obj_mate])


def find_source_triplet(pair: Pair, index: TripletIndex, rng: np.random.Generator) -> TripletSample:
    """
    A training triplet whose hallucinated pair is `pair`.

    Anchors (a0, o0) qualify when (a0, o) and (a, o0) are both training pairs;
    the attribute mate then carries object o and the object mate attribute a.
    """
    attr, obj = pair
    candidates = []
    for sid, s in index.samples.items():
        if s.attr == attr or s.obj == obj:
            continue
        has_attr_mate = any(index.samples[m].obj == obj for m in index.by_attr[s.attr])
        has_obj_mate = any(index.samples[m].attr == attr for m in index.by_obj[s.obj])
        if has_attr_mate and has_obj_mate:
            candidates.append(sid)
    if not candidates:
        raise MateNotFoundError(f"pair ({attr}, {obj}) cannot be realized from training images")
    anchor = index.samples[candidates[int(rng.integers(len(candidates)))]]
    attr_mates = [m for m in index.by_attr[anchor.attr] if index.samples[m].obj == obj]
    obj_mates = [m for m in index.by_obj[anchor.obj] if index.samples[m].attr == attr]
    return TripletSample(
        anchor,
        index.samples[attr_mates[int(rng.integers(len(attr_mates)))]],
        index.samples[obj_mates[int(rng.integers(len(obj_mates)))]],
    )


def stack_triplets(store, triplets: Sequence[TripletSample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(B, n0, 49) grids for anchors, attribute mates and object mates."""
    return (
        store.stack([t.anchor.id for t in triplets]),
        store.stack([t.attr_mate.id for t in triplets]),
        store.stack([t.obj_mate.id for t in triplets]),
    )
