"""
CZSL split construction
Builds the generalized train / val / test partition from label records: canonical tokens,
one attribute per sample, frequency filtering, a seeded seen/unseen pair draw, and pruning of
primitives the training portion no longer supports.
"""

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Set, Tuple, Union

import numpy as np

from ..errors import DataError, DegenerateDatasetError, FormatError
from .manifest import DatasetManifest

logger = logging.getLogger(__name__)

Pair = Tuple[str, str]
EVAL_SPLITS = ("val", "test")
PAIR_KEYS = ("train_pairs", "val_seen_pairs", "val_unseen_pairs", "test_seen_pairs", "test_unseen_pairs")


@dataclass
class SplitSpec:
    train_pairs: List[Pair] = field(default_factory=list)
    val_seen_pairs: List[Pair] = field(default_factory=list)
    val_unseen_pairs: List[Pair] = field(default_factory=list)
    test_seen_pairs: List[Pair] = field(default_factory=list)
    test_unseen_pairs: List[Pair] = field(default_factory=list)
    train_ids: List[str] = field(default_factory=list)
    val_ids: List[str] = field(default_factory=list)
    test_ids: List[str] = field(default_factory=list)
    labels: Dict[str, Pair] = field(default_factory=dict)

    def attributes(self) -> List[str]:
        return sorted({a for a, _ in self.train_pairs})

    def objects(self) -> List[str]:
        return sorted({o for _, o in self.train_pairs})

    def sample_ids(self, split: str) -> List[str]:
        if split not in ("train",) + EVAL_SPLITS:
            raise DataError(f"unknown split {split!r}")
        return getattr(self, f"{split}_ids")

    def unseen_pairs(self, split: str) -> List[Pair]:
        if split not in EVAL_SPLITS:
            raise DataError(f"split {split!r} has no unseen pairs")
        return getattr(self, f"{split}_unseen_pairs")

    def candidate_pairs(self, split: str) -> Tuple[List[Pair], List[bool]]:
        """Columns for generalized evaluation: every training pair plus the split's unseen pairs."""
        unseen = self.unseen_pairs(split)
        return list(self.train_pairs) + list(unseen), [True] * len(self.train_pairs) + [False] * len(unseen)

    def validate(self) -> None:
        train = set(self.train_pairs)
        primitives_a = {a for a, _ in train}
        primitives_o = {o for _, o in train}
        for split in EVAL_SPLITS:
            seen = set(getattr(self, f"{split}_seen_pairs"))
            unseen = set(self.unseen_pairs(split))
            if seen & unseen:
                raise DataError(f"{split} seen and unseen pairs overlap: {sorted(seen & unseen)[:3]}")
            if unseen & train:
                raise DataError(f"{split} unseen pairs also occur in training: {sorted(unseen & train)[:3]}")
            if not seen <= train:
                raise DataError(f"{split} seen pairs missing from training: {sorted(seen - train)[:3]}")
            for a, o in unseen:
                if a not in primitives_a or o not in primitives_o:
                    raise DataError(f"unseen pair ({a}, {o}) uses a primitive absent from training")
        assigned: Set[str] = set()
        for split in ("train",) + EVAL_SPLITS:
            ids = self.sample_ids(split)
            if assigned & set(ids):
                raise DataError(f"samples assigned to more than one split, e.g. {sorted(assigned & set(ids))[0]!r}")
            assigned.update(ids)
            for sid in ids:
                if sid not in self.labels:
                    raise DataError(f"sample {sid!r} has no label in the split")
        for sid in self.train_ids:
            if self.labels[sid] not in train:
                raise DataError(f"training sample {sid!r} carries a pair outside the training pairs")

    def to_dict(self) -> dict:
        out = {key: [list(p) for p in getattr(self, key)] for key in PAIR_KEYS}
        out.update({f"{s}_ids": list(self.sample_ids(s)) for s in ("train",) + EVAL_SPLITS})
        out["labels"] = {sid: list(pair) for sid, pair in sorted(self.labels.items())}
        return out

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_split(path: Union[str, Path]) -> SplitSpec:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"split file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"split {path} is not valid JSON: {e.msg}", line=e.lineno) from e
    try:
        spec = SplitSpec(
            **{key: [(str(a), str(o)) for a, o in raw[key]] for key in PAIR_KEYS},
            train_ids=list(raw["train_ids"]),
            val_ids=list(raw["val_ids"]),
            test_ids=list(raw["test_ids"]),
            labels={sid: (str(p[0]), str(p[1])) for sid, p in raw["labels"].items()},
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"split {path} is malformed: {e}") from e
    spec.validate()
    return spec


def load_synonyms(path: Union[str, Path]) -> Dict[str, str]:
    """JSON object mapping token -> canonical token."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"synonym map not found: {path}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"synonym map {path} is not valid JSON: {e.msg}", line=e.lineno) from e
    if not isinstance(raw, dict):
        raise FormatError(f"synonym map {path} must be a JSON object")
    return {str(k): str(v) for k, v in raw.items()}


def _single_labels(manifest: DatasetManifest, synonyms: Mapping[str, str]) -> Dict[str, Pair]:
    canon = [
        (s.id, sorted({synonyms.get(a, a) for a in s.attr_list()}), synonyms.get(s.obj, s.obj))
        for s in manifest.samples
    ]
    freq = Counter(a for _, attrs, _ in canon for a in attrs)
    # rarest attribute wins, ties go to the lexicographically smallest
    return {sid: (min(attrs, key=lambda a: (freq[a], a)), obj) for sid, attrs, obj in canon}


def _frequency_filter(labels: Dict[str, Pair], min_frequency: int) -> Dict[str, Pair]:
    attr_count = Counter(a for a, _ in labels.values())
    obj_count = Counter(o for _, o in labels.values())
    kept = {sid: p for sid, p in labels.items() if attr_count[p[0]] > min_frequency and obj_count[p[1]] > min_frequency}
    dropped = len(labels) - len(kept)
    if dropped:
        logger.info(f"Frequency filter (<= {min_frequency}) dropped {dropped} samples")
    return kept


def _prune_to_fixed_point(labels: Dict[str, Pair], splits: Dict[str, List[str]], min_frequency: int) -> int:
    rounds = 0
    while True:
        train = splits["train"]
        attr_count = Counter(labels[s][0] for s in train)
        obj_count = Counter(labels[s][1] for s in train)
        present = [s for ids in splits.values() for s in ids]
        bad_attrs = {labels[s][0] for s in present if attr_count[labels[s][0]] <= min_frequency}
        bad_objs = {labels[s][1] for s in present if obj_count[labels[s][1]] <= min_frequency}
        if not bad_attrs and not bad_objs:
            return rounds
        rounds += 1
        for name, ids in splits.items():
            splits[name] = [s for s in ids if labels[s][0] not in bad_attrs and labels[s][1] not in bad_objs]
        logger.info(f"Pruning round {rounds}: removed {len(bad_attrs)} attributes and {len(bad_objs)} objects")


def build_czsl_split(manifest: DatasetManifest, min_frequency: int = 30,
                     synonym_map: Optional[Mapping[str, str]] = None, unseen_fraction: float = 0.35,
                     seed: int = 0, holdout_fraction: float = 0.2) -> SplitSpec:
    """
    Partition a labelled corpus into a generalized CZSL split.

    Unseen pairs alternate between val and test. Every seen pair keeps at
    least one training sample; up to `holdout_fraction` of its samples are
    held out as seen evaluation samples, alternating val/test.
    """
    labels = _frequency_filter(_single_labels(manifest, synonym_map or {}), min_frequency)
    if not labels:
        raise DegenerateDatasetError(f"no samples survive the frequency filter (min_frequency={min_frequency})")

    by_pair: Dict[Pair, List[str]] = defaultdict(list)
    for sid in sorted(labels):
        by_pair[labels[sid]].append(sid)
    pairs = sorted(by_pair)
    rng = np.random.default_rng(seed)

    if len(pairs) == 1:
        logger.warning(f"Degenerate split: single pair {pairs[0]}, every sample goes to training")
        n_unseen = 0
    else:
        n_unseen = min(int(round(unseen_fraction * len(pairs))), len(pairs) - 1)
    order = rng.permutation(len(pairs))
    unseen = [pairs[i] for i in order[:n_unseen]]
    val_unseen, test_unseen = set(unseen[0::2]), set(unseen[1::2])

    splits: Dict[str, List[str]] = {"train": [], "val": [], "test": []}
    for pair in pairs:
        ids = by_pair[pair]
        if pair in val_unseen:
            splits["val"].extend(ids)
            continue
        if pair in test_unseen:
            splits["test"].extend(ids)
            continue
        perm = rng.permutation(len(ids))
        n_hold = 0 if len(pairs) == 1 else min(int(len(ids) * holdout_fraction), len(ids) - 1)
        held = [ids[i] for i in perm[:n_hold]]
        splits["train"].extend(ids[i] for i in perm[n_hold:])
        splits["val"].extend(held[0::2])
        splits["test"].extend(held[1::2])

    _prune_to_fixed_point(labels, splits, min_frequency)
    train_pairs = sorted({labels[s] for s in splits["train"]})
    if not train_pairs:
        raise DegenerateDatasetError("split is empty after pruning primitives absent from training")

    train_set = set(train_pairs)
    spec = SplitSpec(train_pairs=train_pairs, train_ids=sorted(splits["train"]))
    for split, unseen_set in (("val", val_unseen), ("test", test_unseen)):
        ids = sorted(s for s in splits[split] if labels[s] in train_set or labels[s] in unseen_set)
        setattr(spec, f"{split}_ids", ids)
        setattr(spec, f"{split}_seen_pairs", sorted({labels[s] for s in ids if labels[s] in train_set}))
        setattr(spec, f"{split}_unseen_pairs", sorted({labels[s] for s in ids if labels[s] in unseen_set}))
    spec.labels = {s: labels[s] for s in spec.train_ids + spec.val_ids + spec.test_ids}
    spec.validate()

    logger.info(
        f"Built split: {len(train_pairs)} train pairs / {len(spec.train_ids)} samples, "
        f"val {len(spec.val_seen_pairs)}+{len(spec.val_unseen_pairs)} pairs / {len(spec.val_ids)} samples, "
        f"test {len(spec.test_seen_pairs)}+{len(spec.test_unseen_pairs)} pairs / {len(spec.test_ids)} samples"
    )
    return spec

