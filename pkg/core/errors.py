"""
Exception hierarchy shared by every stage.

Library code raises these; main.py turns them into exit codes.
"""
from typing import Optional


class ChunkarError(Exception):
    """Base class for all errors raised by this project."""


class ConfigError(ChunkarError, ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class ShapeError(ChunkarError, ValueError):
    """A shape or divisibility contract was violated."""


class MaskError(ChunkarError, ValueError):
    """An attention mask could not be built or used."""


class DegenerateMaskError(MaskError):
    """A query row has every key blocked."""

    def __init__(self, row: int):
        super().__init__(f"degenerate mask row {row}: every key is blocked")
        self.row = row


class NonFiniteError(ChunkarError, FloatingPointError):
    """A loss, gradient or memory tensor became NaN or infinite."""

    def __init__(self, what: str, name: Optional[str] = None):
        message = f"non-finite {what}" + (f" in '{name}'" if name else "")
        super().__init__(message)
        self.what = what
        self.name = name


class AutoregressiveTargetError(ChunkarError, ValueError):
    """Next-chunk losses need at least two chunks."""

    def __init__(self, chunks: int):
        super().__init__(f"no autoregressive target: {chunks} chunk(s), need at least 2")
        self.chunks = chunks


class VocabError(ChunkarError, KeyError):
    """Out-of-vocabulary word or unknown token id."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "vocabulary error"


class DatasetError(ChunkarError, IOError):
    """Dataset directory, manifest or record missing or malformed."""


class CheckpointError(ChunkarError, IOError):
    """Checkpoint missing, corrupt or from another format version."""


class EmptyTargetError(ChunkarError, ValueError):
    """A loss or metric was asked for with no targets to score."""
