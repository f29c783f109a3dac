"""
Error types for the CZSL engine
Every failure carries the process exit code the CLI reports for it
"""

from typing import Optional


class CzslError(Exception):
    """Base class for all engine errors."""

    exit_code = 4
    kind = "runtime"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def one_line(self) -> str:
        reason = " ".join(self.message.split())
        return f"error kind={self.kind} exit={self.exit_code} reason={reason}"


class ConfigError(CzslError):
    exit_code = 2
    kind = "config"


class DataError(CzslError):
    exit_code = 3
    kind = "data"


class FormatError(DataError):
    """Malformed file; `offset` is a byte offset for binary files, `line` a 1-based line number for text."""

    kind = "format"

    def __init__(self, message: str, offset: Optional[int] = None, line: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        if line is not None:
            message = f"{message} (at line {line})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class VocabularyError(DataError):
    kind = "vocabulary"


class DegenerateDatasetError(DataError):
    kind = "degenerate-dataset"


class MateNotFoundError(DataError):
    kind = "mate-not-found"


class RuntimeFailure(CzslError):
    exit_code = 4
    kind = "runtime"


class DimensionError(RuntimeFailure):
    kind = "dimension"


class NumericError(RuntimeFailure):
    kind = "numeric"


class DegenerateVectorError(RuntimeFailure):
    kind = "degenerate-vector"


class ContractError(RuntimeFailure):
    kind = "contract"


class ProtocolError(RuntimeFailure):
    kind = "protocol"
