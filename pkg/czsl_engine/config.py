"""
Run configuration
Flat `key=value` files with dotted section keys, parsed with python-dotenv.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union, get_args, get_origin, get_type_hints

from dotenv import dotenv_values

from .errors import ConfigError

logger = logging.getLogger(__name__)

OCN_VARIANTS = ("linear", "mlp", "object_conditioned")
UNSEEN_ANCHOR_MODES = ("seen_plus_target", "all_pairs", "seen_only")
WORD_INIT_MODES = ("file", "random")


@dataclass
class DataConfig:
    features: str = ""
    manifest: str = ""
    split: str = ""
    embeddings: str = ""
    masks: str = ""
    synonyms: str = ""
    min_frequency: int = 30
    unseen_fraction: float = 0.35
    holdout_fraction: float = 0.2
    split_seed: int = 0


@dataclass
class SyntheticConfig:
    num_attrs: int = 20
    num_objs: int = 20
    latent_dim: int = 16
    feature_dim: int = 64
    word_dim: int = 64
    blocks_per_factor: int = 4
    noise: float = 0.1
    seen_fraction: float = 0.8
    samples_per_pair: int = 5
    eval_samples_per_seen_pair: int = 1
    seed: int = 7


@dataclass
class ModelConfig:
    n0: int = 512
    n: int = 1024
    d_emb: int = 300
    d_w: int = 300
    ie_dropout: float = 0.3
    head_dropout: float = 0.05
    ocn_variant: str = "object_conditioned"
    ocn_dropout: float = 0.0
    lam: float = 10.0
    gamma: float = 10.0
    delta: float = 0.05
    word_init: str = "file"


@dataclass
class LossConfig:
    alpha1: float = 0.5
    alpha2: float = 0.5
    alpha3: float = 0.05
    alpha4: float = 0.05
    unseen_anchors: str = "seen_plus_target"


@dataclass
class OptimConfig:
    lr: float = 3e-4
    embedding_lr: float = 2.5e-6
    weight_decay: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_epochs: List[int] = field(default_factory=lambda: [30, 40])
    decay_factor: float = 0.1


@dataclass
class TrainConfig:
    preset: str = ""
    epochs: int = 50
    batch_size: int = 32
    validate_every: int = 1
    max_skip_fraction: float = 0.5


@dataclass
class EvalConfig:
    ks: List[int] = field(default_factory=lambda: [1, 3, 5])
    workers: int = 1
    dump_curves: bool = False
    predictions: bool = False


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    # ---- flat views -------------------------------------------------
    def to_flat(self) -> Dict[str, str]:
        flat: Dict[str, str] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in dataclasses.fields(value):
                    flat[f"{f.name}.{sub.name}"] = _format_value(getattr(value, sub.name))
            else:
                flat[f.name] = _format_value(value)
        return flat

    def to_text(self) -> str:
        lines = ["# czsl-engine run configuration"]
        for key, value in self.to_flat().items():
            lines.append(f"{key}={_quote(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_flat(cls, values: Mapping[str, Optional[str]]) -> "RunConfig":
        values = dict(values)
        preset = values.get("train.preset") or ""
        if preset and preset not in PRESETS:
            raise ConfigError(f"unknown preset: {preset}")
        merged: Dict[str, Optional[str]] = dict(PRESETS[preset]) if preset else {}
        merged.update(values)

        config = cls()
        for key, raw in merged.items():
            if raw is None:
                raise ConfigError(f"config key {key} has no value")
            _assign(config, key, raw)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            values = dotenv_values(path, encoding="utf-8", interpolate=False)
        except UnicodeDecodeError as e:
            raise ConfigError(f"config file {path} is not UTF-8: {e}") from e
        return cls.from_flat(values)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def validate(self) -> None:
        m = self.model
        if m.ocn_variant not in OCN_VARIANTS:
            raise ConfigError(f"unknown OCN variant: {m.ocn_variant} (expected one of {', '.join(OCN_VARIANTS)})")
        if m.word_init not in WORD_INIT_MODES:
            raise ConfigError(f"unknown word_init: {m.word_init}")
        if self.loss.unseen_anchors not in UNSEEN_ANCHOR_MODES:
            raise ConfigError(f"unknown unseen_anchors mode: {self.loss.unseen_anchors}")
        for name in ("n0", "n", "d_emb", "d_w"):
            if getattr(m, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")
        if m.d_emb != m.d_w:
            raise ConfigError(f"model.d_emb ({m.d_emb}) must equal model.d_w ({m.d_w}): word vectors are the attribute/object anchors")
        if m.lam <= 0 or m.gamma <= 0:
            raise ConfigError("model.lam and model.gamma must be > 0")
        if m.delta <= 0:
            raise ConfigError("model.delta must be > 0")
        for name in ("ie_dropout", "head_dropout", "ocn_dropout"):
            if not 0.0 <= getattr(m, name) < 1.0:
                raise ConfigError(f"model.{name} must be in [0, 1)")
        for name in ("alpha1", "alpha2", "alpha3", "alpha4"):
            if getattr(self.loss, name) < 0:
                raise ConfigError(f"loss.{name} must be non-negative")
        if self.optim.lr < 0 or self.optim.embedding_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.train.epochs < 0 or self.train.batch_size <= 0:
            raise ConfigError("train.epochs must be >= 0 and train.batch_size > 0")
        if not self.eval.ks or any(k <= 0 for k in self.eval.ks):
            raise ConfigError("eval.ks must be positive")
        if self.eval.workers <= 0:
            raise ConfigError("eval.workers must be positive")
        d = self.data
        if d.min_frequency < 0:
            raise ConfigError("data.min_frequency must be non-negative")
        if not 0.0 <= d.unseen_fraction < 1.0 or not 0.0 <= d.holdout_fraction < 1.0:
            raise ConfigError("data.unseen_fraction and data.holdout_fraction must be in [0, 1)")
        s = self.synthetic
        if min(s.num_attrs, s.num_objs) < 2:
            raise ConfigError("synthetic.num_attrs and synthetic.num_objs must be at least 2")
        if s.samples_per_pair < 1 or s.eval_samples_per_seen_pair < 0 or s.noise < 0:
            raise ConfigError("synthetic.samples_per_pair must be >= 1 and noise/eval samples non-negative")
        if s.blocks_per_factor * 2 > 49 or s.blocks_per_factor <= 0:
            raise ConfigError("synthetic.blocks_per_factor must satisfy 0 < 2*blocks <= 49")
        if not 0.0 < s.seen_fraction <= 1.0:
            raise ConfigError("synthetic.seen_fraction must be in (0, 1]")
        if s.latent_dim > s.feature_dim or s.latent_dim > s.word_dim:
            raise ConfigError("synthetic.latent_dim must not exceed feature_dim or word_dim")


PRESETS: Dict[str, Dict[str, str]] = {
    "mit_states": {
        "optim.lr": "0.0003",
        "optim.decay_epochs": "30,40",
        "model.ocn_variant": "object_conditioned",
        "train.epochs": "50",
    },
    "ut_zappos": {
        "optim.lr": "0.0001",
        "optim.decay_epochs": "50",
        "model.ocn_variant": "linear",
        "model.ocn_dropout": "0.1",
        "train.epochs": "70",
    },
    "vaw_czsl": {
        "optim.lr": "0.0001",
        "optim.decay_epochs": "70",
        "model.ocn_variant": "object_conditioned",
        "train.epochs": "100",
        "eval.ks": "3,5",
    },
    "synthetic": {
        "model.n0": "64",
        "model.n": "128",
        "model.d_emb": "64",
        "model.d_w": "64",
        "model.delta": "20.0",
        "optim.lr": "0.001",
        "optim.decay_epochs": "",
        "train.epochs": "30",
    },
}


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def _quote(value: str) -> str:
    if value and (value != value.strip() or any(c in value for c in "#'\" ")):
        return "'" + value + "'"
    return value


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key} expects a boolean, got {raw!r}")


def _convert(raw: str, kind: Any, key: str) -> Any:
    try:
        if kind is bool:
            return _parse_bool(raw, key)
        if kind is int:
            return int(raw.strip())
        if kind is float:
            return float(raw.strip())
        if kind is str:
            return raw
        if get_origin(kind) in (list, List):
            (item,) = get_args(kind)
            return [_convert(part, item, key) for part in raw.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"config key {key} has invalid value {raw!r}: {e}") from e
    raise ConfigError(f"config key {key} has unsupported type {kind}")


def _assign(config: RunConfig, key: str, raw: str) -> None:
    parts = key.split(".")
    target: Any = config
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(target) or not hasattr(target, part):
            raise ConfigError(f"unknown config key: {key}")
        target = getattr(target, part)
    leaf = parts[-1]
    hints = get_type_hints(type(target)) if dataclasses.is_dataclass(target) else {}
    if leaf not in hints or dataclasses.is_dataclass(getattr(target, leaf)):
        raise ConfigError(f"unknown config key: {key}")
    setattr(target, leaf, _convert(raw, hints[leaf], key))


def env_overrides() -> Dict[str, str]:
    """Environment variables the CLI honours after `load_dotenv()`."""
    found = {}
    for var in ("CZSL_LOG_LEVEL", "CZSL_WORKERS", "CZSL_OUT_DIR"):
        value = os.getenv(var)
        if value:
            found[var] = value
    return found
