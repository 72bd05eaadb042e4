"""
Service C1: Causal Transformer Combiner.

Runs a transformer over all chunks' features under the chunk-causal mask
and keeps the last m output positions of every chunk's segment.
"""
from einops import rearrange
from torch import Tensor, nn

from core.errors import ShapeError
from core.message import CombinedLatents
from utils.chunk_mask import chunk_causal_mask
from utils.nn_substrate import TransformerStack


def check_combiner_input(u: Tensor, m: int) -> None:
    if u.ndim != 4:
        raise ShapeError(f"combiner input must be (B, T, n, d), got {tuple(u.shape)}")
    if m < 1 or m > u.shape[-2]:
        raise ShapeError(f"combiner output size m={m} must be in [1, n={u.shape[-2]}]")


class TransformerCombiner(nn.Module):
    def __init__(self, dim: int, m: int, layers: int, heads: int, hidden: int, dropout: float = 0.):
        super().__init__()
        self.m = m
        self.stack = TransformerStack(dim, layers, heads, hidden, dropout=dropout)

    def forward(self, u: Tensor) -> CombinedLatents:
        check_combiner_input(u, self.m)
        chunks, n = u.shape[1], u.shape[2]
        seq = rearrange(u, 'b t n d -> b (t n) d')
        out = self.stack(seq, chunk_causal_mask(chunks * n, chunks).matrix)
        out = rearrange(out, 'b (t n) d -> b t n d', t=chunks)
        return CombinedLatents(out[..., -self.m:, :])
