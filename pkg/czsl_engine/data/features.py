"""
Feature container
Backbone feature grids (n0 x 49 float32 per sample) in the OADT binary layout:
magic, u32 version, u32 count, u32 n0, u32 positions, then per sample a u32 id
length, the UTF-8 id and n0*49 little-endian float32 values, feature dim major.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DataError, FormatError

logger = logging.getLogger(__name__)

MAGIC = b"OADT"
VERSION = 1
POSITIONS = 49
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def _u32(buf: np.ndarray, offset: int, what: str) -> int:
    if offset + 4 > buf.size:
        raise FormatError(f"file ends inside the {what} field", offset=offset)
    return int(np.frombuffer(buf, dtype=_U32, count=1, offset=offset)[0])


class FeatureStore:
    """Read-only mapping from sample id to its (n0, 49) feature grid, backed by a memory map."""

    def __init__(self, n0: int, ids: List[str], grids: Dict[str, np.ndarray], path: Union[str, Path, None] = None):
        self.n0 = n0
        self.ids = ids
        self._grids = grids
        self.path = path

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._grids

    def __iter__(self) -> Iterator[str]:
        return iter(self.ids)

    def get(self, sample_id: str) -> np.ndarray:
        try:
            return self._grids[sample_id]
        except KeyError:
            raise DataError(f"sample {sample_id!r} is not in the feature store") from None

    def stack(self, sample_ids: Sequence[str]) -> np.ndarray:
        """(B, n0, 49) float32 copy of the requested grids."""
        if not sample_ids:
            return np.zeros((0, self.n0, POSITIONS), dtype=np.float32)
        return np.stack([self.get(s) for s in sample_ids]).astype(np.float32)

    def items(self) -> Iterable[Tuple[str, np.ndarray]]:
        return ((s, self._grids[s]) for s in self.ids)


def write_features(path: Union[str, Path], grids: Mapping[str, np.ndarray], n0: Optional[int] = None) -> None:
    """Write grids in insertion order; every grid must be (n0, 49)."""
    path = Path(path)
    if n0 is None:
        n0 = next(iter(grids.values())).shape[0] if grids else 0
    header = np.array([VERSION, len(grids), n0, POSITIONS], dtype=_U32).tobytes()
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(header)
        for sample_id, grid in grids.items():
            grid = np.asarray(grid)
            if grid.shape != (n0, POSITIONS):
                raise DataError(f"grid for {sample_id!r} has shape {grid.shape}, expected ({n0}, {POSITIONS})")
            encoded = sample_id.encode("utf-8")
            fh.write(np.array([len(encoded)], dtype=_U32).tobytes())
            fh.write(encoded)
            fh.write(np.ascontiguousarray(grid, dtype=_F32).tobytes())
    logger.info(f"Wrote {len(grids)} feature grids to {path}")


def load_features(path: Union[str, Path]) -> FeatureStore:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature file not found: {path}")
    if path.stat().st_size == 0:
        raise FormatError("empty feature file", offset=0)
    buf = np.memmap(path, dtype=np.uint8, mode="r")

    if buf.size < 4 or bytes(buf[:4]) != MAGIC:
        raise FormatError(f"bad magic in {path}", offset=0)
    version = _u32(buf, 4, "version")
    if version != VERSION:
        raise FormatError(f"unsupported feature container version {version}", offset=4)
    count = _u32(buf, 8, "count")
    n0 = _u32(buf, 12, "n0")
    positions = _u32(buf, 16, "positions")
    if positions != POSITIONS:
        raise FormatError(f"feature grids must have {POSITIONS} positions, header says {positions}", offset=16)

    grid_bytes = n0 * POSITIONS * _F32.itemsize
    offset = 20
    ids: List[str] = []
    grids: Dict[str, np.ndarray] = {}
    for _ in range(count):
        id_len = _u32(buf, offset, "id length")
        offset += 4
        if offset + id_len > buf.size:
            raise FormatError("file ends inside a sample id", offset=offset)
        try:
            sample_id = bytes(buf[offset:offset + id_len]).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"sample id is not UTF-8: {e}", offset=offset) from e
        if sample_id in grids:
            raise FormatError(f"duplicate sample id {sample_id!r}", offset=offset)
        offset += id_len
        if offset + grid_bytes > buf.size:
            raise FormatError(f"file ends inside the grid of {sample_id!r}", offset=offset)
        grids[sample_id] = np.frombuffer(buf, dtype=_F32, count=n0 * POSITIONS, offset=offset).reshape(n0, POSITIONS)
        ids.append(sample_id)
        offset += grid_bytes
    if offset != buf.size:
        raise FormatError(f"{buf.size - offset} trailing bytes after the last sample", offset=offset)

    logger.info(f"Loaded {count} feature grids (n0={n0}) from {path}")
    return FeatureStore(n0, ids, grids, path)
