"""
Shared fixtures: a tiny synthetic benchmark written to a temp dir and a small model config.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pytest

from czsl_engine.config import ModelConfig, RunConfig
from czsl_engine.data import (
    FeatureStore,
    SplitSpec,
    SyntheticDataset,
    generate_synthetic,
    load_features,
    load_split,
    load_word_embeddings,
    write_synthetic,
)

# 4 attributes x 4 objects, 12 seen pairs, every primitive in three seen pairs
TINY = {
    "train.preset": "synthetic",
    "synthetic.num_attrs": "4",
    "synthetic.num_objs": "4",
    "synthetic.latent_dim": "4",
    "synthetic.feature_dim": "16",
    "synthetic.word_dim": "8",
    "synthetic.blocks_per_factor": "3",
    "synthetic.seen_fraction": "0.75",
    "synthetic.samples_per_pair": "3",
    "synthetic.eval_samples_per_seen_pair": "1",
    "model.n0": "16",
    "model.n": "48",
    "model.d_emb": "8",
    "model.d_w": "8",
    "train.epochs": "2",
    "train.batch_size": "8",
    "eval.ks": "1,2",
}


@dataclass
class TinyRun:
    config: RunConfig
    dataset: SyntheticDataset
    store: FeatureStore
    split: SplitSpec
    vectors: Dict[str, np.ndarray]
    data_dir: Path
    config_path: Path


def tiny_config(**overrides: str) -> RunConfig:
    values = dict(TINY)
    values.update(overrides)
    return RunConfig.from_flat(values)


@pytest.fixture
def tiny_run(tmp_path) -> TinyRun:
    config = tiny_config()
    dataset = generate_synthetic(config.synthetic)
    data_dir = tmp_path / "data"
    files = write_synthetic(dataset, data_dir)
    config.data.features = str(files["features"])
    config.data.manifest = str(files["manifest"])
    config.data.split = str(files["split"])
    config.data.masks = str(files["masks"])
    config.data.embeddings = str(files["embeddings"])
    config.out_dir = str(tmp_path / "run")
    config_path = tmp_path / "run.cfg"
    config.save(config_path)
    return TinyRun(
        config=config,
        dataset=dataset,
        store=load_features(files["features"]),
        split=load_split(files["split"]),
        vectors=load_word_embeddings(files["embeddings"], expected_dim=8),
        data_dir=data_dir,
        config_path=config_path,
    )


@pytest.fixture
def small_model_config() -> ModelConfig:
    return ModelConfig(n0=6, n=40, d_emb=4, d_w=4, word_init="random", ie_dropout=0.3, head_dropout=0.05)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_grid(rng: np.random.Generator, batch: int, channels: int, positions: int = 49,
                dtype: Optional[type] = None) -> np.ndarray:
    out = rng.standard_normal((batch, channels, positions))
    return out.astype(dtype) if dtype else out
