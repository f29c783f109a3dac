"""
Synthetic benchmark
Planted attribute and object factors on disjoint spatial blocks, with the block sets
recorded as ground-truth masks for checking where the affinity maps put their mass.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Set, Tuple, Union

import numpy as np

from ..config import SyntheticConfig
from ..errors import ConfigError, ContractError, DataError, FormatError
from .embeddings import write_word_embeddings
from .features import POSITIONS, write_features
from .manifest import DatasetManifest, SampleRecord
from .split import SplitSpec

logger = logging.getLogger(__name__)

Pair = Tuple[str, str]
FEATURES_FILE = "features.oadt"
MANIFEST_FILE = "manifest.json"
SPLIT_FILE = "split.json"
MASKS_FILE = "masks.json"
EMBEDDINGS_FILE = "embeddings.txt"


@dataclass
class BlockMask:
    attr_blocks: List[int]
    obj_blocks: List[int]


@dataclass
class SyntheticDataset:
    manifest: DatasetManifest
    split: SplitSpec
    features: Dict[str, np.ndarray]
    masks: Dict[str, BlockMask]
    word_vectors: Dict[str, np.ndarray]
    feature_dim: int
    files: Dict[str, Path] = field(default_factory=dict)


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((count, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _seen_pairs(num_attrs: int, num_objs: int, seen_fraction: float, rng: np.random.Generator) -> Set[Tuple[int, int]]:
    # two seen pairs per attribute and per object so every training anchor has both mates
    required = set()
    for i in range(num_attrs):
        required.add((i, i % num_objs))
        required.add((i, (i + 1) % num_objs))
    for j in range(num_objs):
        required.add((j % num_attrs, j))
        required.add(((j + 1) % num_attrs, j))
    total = num_attrs * num_objs
    target = max(len(required), int(round(seen_fraction * total)))
    rest = [(a, o) for a in range(num_attrs) for o in range(num_objs) if (a, o) not in required]
    extra = target - len(required)
    picked = rng.permutation(len(rest))[:extra]
    return required | {rest[i] for i in picked}


def generate_synthetic(config: SyntheticConfig) -> SyntheticDataset:
    c = config
    if c.blocks_per_factor <= 0 or 2 * c.blocks_per_factor > POSITIONS:
        raise ConfigError("synthetic.blocks_per_factor must satisfy 0 < 2*blocks <= 49")
    if not 0.0 < c.seen_fraction <= 1.0:
        raise ConfigError("synthetic.seen_fraction must be in (0, 1]")
    if min(c.num_attrs, c.num_objs) < 2:
        raise ConfigError("synthetic data needs at least two attributes and two objects")
    if c.latent_dim > min(c.feature_dim, c.word_dim):
        raise ConfigError("synthetic.latent_dim must not exceed feature_dim or word_dim")

    rng = np.random.default_rng(c.seed)
    attrs = [f"attr{i:02d}" for i in range(c.num_attrs)]
    objs = [f"obj{j:02d}" for j in range(c.num_objs)]
    attr_latent = _unit_rows(rng, c.num_attrs, c.latent_dim)
    obj_latent = _unit_rows(rng, c.num_objs, c.latent_dim)
    feature_lift = _orthonormal(rng, c.feature_dim, c.latent_dim)
    word_lift = _orthonormal(rng, c.word_dim, c.latent_dim)
    attr_columns = attr_latent @ feature_lift.T
    obj_columns = obj_latent @ feature_lift.T

    seen_idx = _seen_pairs(c.num_attrs, c.num_objs, c.seen_fraction, rng)
    unseen_idx = sorted(set((a, o) for a in range(c.num_attrs) for o in range(c.num_objs)) - seen_idx)
    order = rng.permutation(len(unseen_idx))
    half = (len(unseen_idx) + 1) // 2
    val_unseen = {unseen_idx[i] for i in order[:half]}

    features: Dict[str, np.ndarray] = {}
    masks: Dict[str, BlockMask] = {}
    records: List[SampleRecord] = []
    split = SplitSpec()
    noise_scale = c.noise / np.sqrt(c.feature_dim)

    def draw(a: int, o: int) -> str:
        sid = f"s{len(records):05d}"
        blocks = rng.permutation(POSITIONS)[: 2 * c.blocks_per_factor]
        attr_blocks = sorted(int(b) for b in blocks[: c.blocks_per_factor])
        obj_blocks = sorted(int(b) for b in blocks[c.blocks_per_factor:])
        grid = noise_scale * rng.standard_normal((c.feature_dim, POSITIONS))
        grid[:, attr_blocks] += attr_columns[a][:, None]
        grid[:, obj_blocks] += obj_columns[o][:, None]
        features[sid] = grid.astype(np.float32)
        masks[sid] = BlockMask(attr_blocks, obj_blocks)
        records.append(SampleRecord(sid, attrs[a], objs[o]))
        split.labels[sid] = (attrs[a], objs[o])
        return sid

    for a in range(c.num_attrs):
        for o in range(c.num_objs):
            pair = (a, o)
            if pair in seen_idx:
                split.train_ids.extend(draw(a, o) for _ in range(c.samples_per_pair))
                split.val_ids.extend(draw(a, o) for _ in range(c.eval_samples_per_seen_pair))
                split.test_ids.extend(draw(a, o) for _ in range(c.eval_samples_per_seen_pair))
            else:
                target = split.val_ids if pair in val_unseen else split.test_ids
                target.extend(draw(a, o) for _ in range(c.samples_per_pair))

    named = lambda idx: (attrs[idx[0]], objs[idx[1]])  # noqa: E731
    split.train_pairs = sorted(named(p) for p in seen_idx)
    has_eval_seen = c.eval_samples_per_seen_pair > 0
    split.val_seen_pairs = list(split.train_pairs) if has_eval_seen else []
    split.test_seen_pairs = list(split.train_pairs) if has_eval_seen else []
    split.val_unseen_pairs = sorted(named(p) for p in unseen_idx if p in val_unseen)
    split.test_unseen_pairs = sorted(named(p) for p in unseen_idx if p not in val_unseen)
    split.validate()

    word_vectors = {attrs[i]: word_lift @ attr_latent[i] for i in range(c.num_attrs)}
    word_vectors.update({objs[j]: word_lift @ obj_latent[j] for j in range(c.num_objs)})

    logger.info(
        f"Generated synthetic data: {c.num_attrs}x{c.num_objs} pairs, {len(seen_idx)} seen, "
        f"{len(split.train_ids)} train / {len(split.val_ids)} val / {len(split.test_ids)} test samples"
    )
    return SyntheticDataset(
        manifest=DatasetManifest(records, attrs, objs),
        split=split,
        features=features,
        masks=masks,
        word_vectors=word_vectors,
        feature_dim=c.feature_dim,
    )


def write_synthetic(dataset: SyntheticDataset, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out}: {e}") from e
    files = {
        "features": out / FEATURES_FILE,
        "manifest": out / MANIFEST_FILE,
        "split": out / SPLIT_FILE,
        "masks": out / MASKS_FILE,
        "embeddings": out / EMBEDDINGS_FILE,
    }
    write_features(files["features"], dataset.features, dataset.feature_dim)
    dataset.manifest.save(files["manifest"])
    dataset.split.save(files["split"])
    save_masks(files["masks"], dataset.masks)
    write_word_embeddings(files["embeddings"], dataset.word_vectors)
    dataset.files = files
    return files


def save_masks(path: Union[str, Path], masks: Dict[str, BlockMask]) -> None:
    payload = {sid: {"attr_blocks": m.attr_blocks, "obj_blocks": m.obj_blocks} for sid, m in masks.items()}
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_masks(path: Union[str, Path]) -> Dict[str, BlockMask]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        return {sid: BlockMask(list(m["attr_blocks"]), list(m["obj_blocks"])) for sid, m in raw.items()}
    except FileNotFoundError:
        raise DataError(f"mask file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"mask file {path} is not valid JSON: {e.msg}", line=e.lineno) from e
    except (KeyError, TypeError, AttributeError) as e:
        raise FormatError(f"mask file {path} is malformed: {e}") from e


def attention_mass_on_mask(weights, mask: Sequence[int]) -> float:
    """
    Share of a position-weight vector falling on `mask` (0-based positions).

    `weights` is a length-49 array, or any object with a `.data` array whose
    last axis holds the 49 positions (the first row is used).
    """
    mask = sorted(set(int(j) for j in mask))
    if not mask:
        raise ContractError("attention mass needs a non-empty mask")
    if mask[0] < 0 or mask[-1] >= POSITIONS:
        raise ContractError(f"mask positions must lie in [0, {POSITIONS})")
    w = np.asarray(getattr(weights, "data", weights), dtype=np.float64)
    w = w.reshape(-1, w.shape[-1])[0]
    if w.shape[0] != POSITIONS:
        raise ContractError(f"weights must cover {POSITIONS} positions, got {w.shape[0]}")
    total = w.sum()
    if total <= 0:
        raise ContractError("weights have no mass")
    return float(w[mask].sum() / total)
