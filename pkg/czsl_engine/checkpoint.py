"""
Checkpoints
"OADC" container: magic, u32 version, u32 JSON length, UTF-8 JSON block (flat run config,
vocabularies, seen pairs, metadata), u32 tensor count, then per tensor a u32 name length,
UTF-8 name, u32 rank, rank x u32 dims and little-endian float32 data.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import RunConfig
from .core import CompositionNet
from .errors import DataError, FormatError

logger = logging.getLogger(__name__)

MAGIC = b"OADC"
VERSION = 1
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")

Pair = Tuple[str, str]


@dataclass
class Checkpoint:
    config: RunConfig
    attributes: List[str]
    objects: List[str]
    seen_pairs: List[Pair]
    tensors: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)

    def build_model(self) -> CompositionNet:
        model = CompositionNet(self.config.model, self.attributes, self.objects, None, seed=self.config.seed)
        model.load_state_arrays(self.tensors)
        return model


def _u32(value: int) -> bytes:
    return np.array([value], dtype=_U32).tobytes()


def save_checkpoint(path: Union[str, Path], model: CompositionNet, config: RunConfig,
                    seen_pairs: Sequence[Pair], meta: Optional[Dict[str, Any]] = None) -> None:
    header = {
        "config": config.to_flat(),
        "attributes": list(model.attributes),
        "objects": list(model.objects),
        "seen_pairs": [list(p) for p in seen_pairs],
        "meta": meta or {},
    }
    block = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = model.state_arrays()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(_u32(VERSION))
        fh.write(_u32(len(block)))
        fh.write(block)
        fh.write(_u32(len(arrays)))
        for name in sorted(arrays):
            data = np.ascontiguousarray(arrays[name], dtype=_F32)
            encoded = name.encode("utf-8")
            fh.write(_u32(len(encoded)))
            fh.write(encoded)
            fh.write(_u32(data.ndim))
            fh.write(np.array(data.shape, dtype=_U32).tobytes())
            fh.write(data.tobytes())
    tmp.replace(path)
    logger.info(f"Saved checkpoint with {len(arrays)} tensors to {path}")


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.raw):
            raise FormatError(f"checkpoint ends inside {what}", offset=self.pos)
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self, what: str) -> int:
        return int(np.frombuffer(self.take(4, what), dtype=_U32)[0])


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes())
    if reader.take(4, "magic") != MAGIC:
        raise FormatError(f"{path} is not a checkpoint (bad magic)", offset=0)
    version = reader.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    block_start = reader.pos + 4
    block = reader.take(reader.u32("JSON length"), "the JSON block")
    try:
        header = json.loads(block.decode("utf-8"))
        config = RunConfig.from_flat(header["config"])
        attributes = [str(a) for a in header["attributes"]]
        objects = [str(o) for o in header["objects"]]
        seen_pairs = [(str(a), str(o)) for a, o in header["seen_pairs"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"checkpoint JSON block is malformed: {e}", offset=block_start) from e

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32("tensor count")):
        name_length = reader.u32("name length")
        name_start = reader.pos
        raw_name = reader.take(name_length, "a tensor name")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"tensor name is not UTF-8: {e}", offset=name_start) from e
        rank = reader.u32("rank")
        shape = tuple(int(d) for d in np.frombuffer(reader.take(4 * rank, "tensor dims"), dtype=_U32))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(count * _F32.itemsize, f"tensor {name}"), dtype=_F32).reshape(shape)
        tensors[name] = data.astype(np.float32)
    if reader.pos != len(reader.raw):
        raise FormatError("trailing bytes after the last tensor", offset=reader.pos)

    logger.info(f"Loaded checkpoint {path}: {len(tensors)} tensors, {len(seen_pairs)} seen pairs")
    return Checkpoint(config, attributes, objects, seen_pairs, tensors, dict(header.get("meta", {})))
