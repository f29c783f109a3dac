"""
Word embeddings
GloVe-style text tables: one `token v1 ... vD` line per token, whitespace separated.
"""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from ..errors import ConfigError, DataError, FormatError, VocabularyError

logger = logging.getLogger(__name__)

WordTable = Dict[str, np.ndarray]


def load_word_embeddings(path: Union[str, Path], expected_dim: Optional[int] = None) -> WordTable:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"embeddings file not found: {path}")
    table: WordTable = {}
    dim = None
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"embeddings file {path} is not UTF-8: {e}") from e

    for number, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        token, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim == 0:
                raise FormatError(f"token {token!r} has no vector", line=number)
        elif len(values) != dim:
            raise FormatError(f"token {token!r} has {len(values)} values, expected {dim}", line=number)
        if token in table:
            raise FormatError(f"duplicate token {token!r}", line=number)
        try:
            table[token] = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as e:
            raise FormatError(f"non-numeric value for token {token!r}: {e}", line=number) from e

    if expected_dim is not None and dim is not None and dim != expected_dim:
        raise ConfigError(f"embeddings in {path} have dimension {dim}, config expects {expected_dim}")
    logger.info(f"Loaded {len(table)} word vectors (dim={dim}) from {path}")
    return table


def write_word_embeddings(path: Union[str, Path], table: Mapping[str, np.ndarray]) -> None:
    lines = []
    for token, vector in table.items():
        if any(c.isspace() for c in token) or not token:
            raise DataError(f"token {token!r} cannot be written to a whitespace-separated table")
        lines.append(token + " " + " ".join(repr(float(v)) for v in np.asarray(vector).reshape(-1)))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def lookup(table: Mapping[str, np.ndarray], token: str) -> np.ndarray:
    try:
        return table[token]
    except KeyError:
        raise VocabularyError(f"no word vector for token {token!r}") from None
