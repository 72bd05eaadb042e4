"""
Stage D: Latent Autoregression and Video Reconstruction.

A chunk-causal transformer turns combiner outputs x into states h_hat
that predict x_{t+1}; a separate chunk-causal decoder maps h_hat_t to the
downsampled pixels of chunk t+1. Both losses are mean (1 - cosine).
"""
import torch
from einops import rearrange, reduce
from torch import Tensor, nn

from core.errors import AutoregressiveTargetError, ShapeError
from core.message import CombinedLatents, LatentStates, ReconTarget
from utils.chunk_mask import chunk_causal_mask
from utils.nn_substrate import TransformerStack, cosine_rows


def _chunk_causal_stack(stack: TransformerStack, blocks: Tensor) -> Tensor:
    """Run `stack` over (B, T, m, d) blocks flattened in time under the chunk mask."""
    chunks, m = blocks.shape[1], blocks.shape[2]
    seq = rearrange(blocks, 'b t m d -> b (t m) d')
    out = stack(seq, chunk_causal_mask(chunks * m, chunks).matrix)
    return rearrange(out, 'b (t m) d -> b t m d', t=chunks)


class LatentCausalModel(nn.Module):
    def __init__(self, dim: int, layers: int, heads: int, hidden: int,
                 max_chunks: int = 64, dropout: float = 0.):
        super().__init__()
        self.max_chunks = max_chunks
        self.chunk_pos = nn.Parameter(torch.randn(max_chunks, dim) * 0.02)
        self.stack = TransformerStack(dim, layers, heads, hidden, dropout=dropout)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: CombinedLatents) -> LatentStates:
        if x.x.ndim != 4:
            raise ShapeError(f"combined latents must be (B, T, m, d), got {tuple(x.x.shape)}")
        if x.chunks > self.max_chunks:
            raise ShapeError(f"{x.chunks} chunks exceed the {self.max_chunks} chunk positions")
        blocks = x.x + self.chunk_pos[:x.chunks, None, :]
        return LatentStates(self.norm(_chunk_causal_stack(self.stack, blocks)))


class ReconDecoder(nn.Module):
    """Chunk-causal transformer over h_hat, then a per-chunk head to flattened v_small."""

    def __init__(self, dim: int, m: int, out_features: int, layers: int, heads: int, hidden: int,
                 dropout: float = 0.):
        super().__init__()
        self.out_features = out_features
        self.stack = TransformerStack(dim, layers, heads, hidden, dropout=dropout)
        self.head = nn.Linear(m * dim, out_features)

    def forward(self, h_hat: LatentStates) -> Tensor:
        out = _chunk_causal_stack(self.stack, h_hat.h_hat)
        return self.head(rearrange(out, 'b t m d -> b t (m d)'))


def downsample_video(chunks: Tensor, factor: int = 4) -> ReconTarget:
    """Spatial average pooling of (..., K, H, W, C) by `factor`; time is kept."""
    height, width = chunks.shape[-3], chunks.shape[-2]
    if factor < 1 or height % factor or width % factor:
        raise ShapeError(f"frame {height}x{width} is not divisible by downsample factor {factor}")
    small = reduce(chunks, '... k (h fh) (w fw) c -> ... k h w c', 'mean', fh=factor, fw=factor)
    return ReconTarget(v_small=small, factor=factor)


def latent_recon_loss(h_hat: LatentStates, x: CombinedLatents, detach_target: bool = False) -> Tensor:
    """Mean over t < T and the m rows of 1 - cos(h_hat_t row, x_{t+1} row)."""
    if h_hat.chunks < 2:
        raise AutoregressiveTargetError(h_hat.chunks)
    if h_hat.h_hat.shape != x.x.shape:
        raise ShapeError(f"states {tuple(h_hat.h_hat.shape)} and latents {tuple(x.x.shape)} differ")
    target = x.x[:, 1:]
    if detach_target:
        target = target.detach()
    return (1.0 - cosine_rows(h_hat.h_hat[:, :-1], target)).mean()


def video_recon_loss(pred: Tensor, target: ReconTarget) -> Tensor:
    """Mean over t < T of 1 - cos(prediction at t, flattened v_small of chunk t+1)."""
    flat = target.flat()
    if pred.shape[1] < 2:
        raise AutoregressiveTargetError(pred.shape[1])
    if pred.shape != flat.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} does not match target {tuple(flat.shape)}")
    return (1.0 - cosine_rows(pred[:, :-1], flat[:, 1:])).mean()
