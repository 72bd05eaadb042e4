"""
Service C3: Perceiver-resampler Combiner.

At step t, m learned latents cross-attend to u_1..u_t together with
their own step's latents, then self-attend within the step, then pass an
MLP. Keys of later chunks are masked out.
"""
import torch
from einops import rearrange, repeat
from torch import Tensor, nn

from core.message import CombinedLatents
from services.service_c1_transformer_combiner import check_combiner_input
from utils.chunk_mask import chunk_cross_mask, chunk_diagonal_mask
from utils.nn_substrate import Attention, FeedForward


class PerceiverCombiner(nn.Module):
    def __init__(self, dim: int, m: int, layers: int, heads: int, hidden: int, dropout: float = 0.):
        super().__init__()
        self.m = m
        self.latents = nn.Parameter(torch.randn(m, dim) * 0.02)
        self.layers = nn.ModuleList([
            nn.ModuleList([
                Attention(dim, heads, context_dim=dim, dropout=dropout),
                Attention(dim, heads, dropout=dropout),
                FeedForward(dim, hidden, dropout=dropout),
            ])
            for _ in range(layers)
        ])

    @torch.no_grad()
    def zero_residual_branches(self, keep_cross: bool = False) -> None:
        for cross_attn, self_attn, ff in self.layers:
            branches = [self_attn.to_out, ff.to_out] + ([] if keep_cross else [cross_attn.to_out])
            for linear in branches:
                linear.weight.zero_()
                linear.bias.zero_()

    def forward(self, u: Tensor) -> CombinedLatents:
        check_combiner_input(u, self.m)
        batch, chunks, n = u.shape[0], u.shape[1], u.shape[2]
        q_len = chunks * self.m

        keys = rearrange(u, 'b t n d -> b (t n) d')
        latents = repeat(self.latents, 'm d -> b (t m) d', b=batch, t=chunks)
        step_mask = chunk_diagonal_mask(q_len, chunks)
        cross_mask = torch.cat((chunk_cross_mask(q_len, chunks * n, chunks), step_mask), dim=-1)

        for cross_attn, self_attn, ff in self.layers:
            context = torch.cat((keys, latents), dim=-2)
            latents = latents + cross_attn(latents, cross_mask, context=context)
            latents = latents + self_attn(latents, step_mask)
            latents = latents + ff(latents)

        return CombinedLatents(rearrange(latents, 'b (t m) d -> b t m d', t=chunks))
