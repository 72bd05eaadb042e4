"""
Service C2: CLS-token Combiner.

Appends m learned tokens to every chunk's segment; their outputs after
the chunk-causal transformer are the combined features.
"""
import torch
from einops import rearrange, repeat
from torch import Tensor, nn

from core.message import CombinedLatents
from services.service_c1_transformer_combiner import check_combiner_input
from utils.chunk_mask import chunk_causal_mask
from utils.nn_substrate import TransformerStack


class CLSCombiner(nn.Module):
    def __init__(self, dim: int, m: int, layers: int, heads: int, hidden: int, dropout: float = 0.):
        super().__init__()
        self.m = m
        self.cls_tokens = nn.Parameter(torch.randn(m, dim) * 0.02)
        self.stack = TransformerStack(dim, layers, heads, hidden, dropout=dropout)

    def forward(self, u: Tensor) -> CombinedLatents:
        check_combiner_input(u, self.m)
        batch, chunks = u.shape[0], u.shape[1]
        # appended tokens belong to their own chunk for masking purposes
        cls = repeat(self.cls_tokens, 'm d -> b t m d', b=batch, t=chunks)
        seq = torch.cat((u, cls), dim=-2)
        per_chunk = seq.shape[-2]
        out = self.stack(rearrange(seq, 'b t n d -> b (t n) d'),
                         chunk_causal_mask(chunks * per_chunk, chunks).matrix)
        out = rearrange(out, 'b (t n) d -> b t n d', t=chunks)
        return CombinedLatents(out[..., -self.m:, :])
