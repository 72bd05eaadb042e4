"""
Chunk-level causal attention masks.

Mask convention: 0 / False = attend allowed, 1 / True = blocked.
A feature may attend to every feature of its own chunk and of all
earlier chunks, including positions ahead of it inside its chunk.
"""
from dataclasses import dataclass
from functools import lru_cache

import torch
from torch import Tensor

from core.errors import MaskError


def _require_divisible(n_feat: int, chunks: int) -> None:
    if n_feat <= 0 or chunks <= 0:
        raise MaskError(f"feature count and chunk count must be positive, got {n_feat} and {chunks}")
    if n_feat % chunks != 0:
        raise MaskError(f"{chunks} chunks do not divide {n_feat} features")


def chunk_of(i: int, n_feat: int, chunks: int) -> int:
    """
    1-based chunk number of the 0-based feature index i.

    Equals ceil((i + 1) * chunks / n_feat).
    """
    _require_divisible(n_feat, chunks)
    if not 0 <= i < n_feat:
        raise MaskError(f"feature index {i} outside [0, {n_feat})")
    return -(-(i + 1) * chunks // n_feat)


@dataclass(frozen=True)
class ChunkMask:
    """Boolean (n_feat, n_feat) matrix, True = blocked."""
    matrix: Tensor
    n_feat: int
    chunks: int

    def allowed(self, i: int, j: int) -> bool:
        return not bool(self.matrix[i, j])

    def as_int(self) -> Tensor:
        return self.matrix.to(torch.int64)


@lru_cache(maxsize=64)
def chunk_causal_mask(n_feat: int, chunks: int) -> ChunkMask:
    """Key j (1-based) is allowed for query i iff j <= chunk_of(i) * n_feat / chunks."""
    _require_divisible(n_feat, chunks)
    per_chunk = n_feat // chunks
    idx = torch.arange(n_feat)
    query_chunk = -(-(idx + 1) * chunks // n_feat)
    limit = query_chunk * per_chunk
    blocked = (idx[None, :] + 1) > limit[:, None]
    return ChunkMask(matrix=blocked, n_feat=n_feat, chunks=chunks)


@lru_cache(maxsize=64)
def chunk_cross_mask(n_query: int, n_key: int, chunks: int) -> Tensor:
    """
    Rectangular chunk-causal mask: queries and keys are each split into
    `chunks` equal segments; query chunk t sees key chunks 1..t.
    """
    _require_divisible(n_query, chunks)
    _require_divisible(n_key, chunks)
    q_chunk = torch.arange(n_query) // (n_query // chunks)
    k_chunk = torch.arange(n_key) // (n_key // chunks)
    return k_chunk[None, :] > q_chunk[:, None]


@lru_cache(maxsize=64)
def chunk_diagonal_mask(n_feat: int, chunks: int) -> Tensor:
    """Block-diagonal mask: features only see their own chunk."""
    _require_divisible(n_feat, chunks)
    c = torch.arange(n_feat) // (n_feat // chunks)
    return c[None, :] != c[:, None]
