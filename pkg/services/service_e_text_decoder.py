"""
Stage E: Text Decoder.

Autoregressive decoder over the closed vocabulary. Every block has causal
self-attention over the tokens and residual cross-attention into all
T*m latent states h_hat.
"""
from typing import List, Optional, Union

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import Tensor, nn

from core.errors import EmptyTargetError, ShapeError
from core.message import LatentStates, TokenSequence
from utils.nn_substrate import TransformerStack


def causal_token_mask(length: int, device=None) -> Tensor:
    """(L, L) bool, True above the diagonal (future tokens blocked)."""
    return torch.ones(length, length, dtype=torch.bool, device=device).triu(1)


def flatten_states(context: Union[LatentStates, Tensor, None]) -> Optional[Tensor]:
    if context is None:
        return None
    states = context.h_hat if isinstance(context, LatentStates) else context
    if states.ndim == 4:
        states = rearrange(states, 'b t m d -> b (t m) d')
    return states


class TextDecoder(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        dim: int,
        layers: int,
        heads: int,
        hidden: int,
        max_len: int = 16,
        dropout: float = 0.,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.token_emb = nn.Embedding(vocab_size, dim)
        self.pos_emb = nn.Parameter(torch.randn(max_len, dim) * 0.02)
        self.stack = TransformerStack(dim, layers, heads, hidden, cross_attend=True, dropout=dropout)
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, vocab_size)

    @torch.no_grad()
    def zero_cross_attention(self) -> None:
        for block in self.stack.blocks:
            block.cross_attn.to_out.weight.zero_()
            block.cross_attn.to_out.bias.zero_()

    def forward(self, ids: Tensor, context: Union[LatentStates, Tensor, None] = None) -> Tensor:
        """
        Args:
            ids: (B, L) input token ids, BOS first
            context: h_hat as LatentStates, (B, T, m, d) or (B, T*m, d);
                None runs the text-only decoder

        Returns:
            (B, L, vocab_size) logits; row l depends on ids[:, :l+1] and h_hat only
        """
        length = ids.shape[-1]
        if length < 1 or length > self.max_len:
            raise ShapeError(f"text length {length} outside 1..{self.max_len}")
        x = self.token_emb(ids) + self.pos_emb[:length]
        x = self.stack(x, causal_token_mask(length, ids.device), context=flatten_states(context))
        return self.head(self.norm(x))


def text_ce_loss(logits: Tensor, targets: Tensor, pad_id: int, label_smoothing: float = 0.0) -> Tensor:
    """Mean token cross-entropy over non-PAD targets (targets = inputs shifted by one)."""
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    if not bool((targets != pad_id).any()):
        raise EmptyTargetError("text loss over an all-PAD target")
    return F.cross_entropy(
        rearrange(logits, '... v -> (...) v'),
        targets.reshape(-1),
        ignore_index=pad_id,
        label_smoothing=label_smoothing,
    )


@torch.no_grad()
def greedy_decode(
    decoder: TextDecoder,
    prompt: Union[TokenSequence, Tensor],
    context: Union[LatentStates, Tensor, None],
    max_len: int,
    eos_id: int,
) -> List[TokenSequence]:
    """
    Batched greedy decoding. Each step appends the argmax token (lowest id
    on ties); a row stops after emitting EOS or `max_len` tokens. Returns the
    generated tokens of every row, prompt excluded.
    """
    if max_len < 1:
        raise ShapeError(f"max_len must be at least 1, got {max_len}")
    if isinstance(prompt, TokenSequence):
        prompt = torch.tensor([prompt.ids], dtype=torch.long)
    context = flatten_states(context)
    if context is not None and context.shape[0] != prompt.shape[0]:
        prompt = prompt.expand(context.shape[0], -1)
    if prompt.shape[-1] + max_len - 1 > decoder.max_len:
        raise ShapeError(f"prompt of {prompt.shape[-1]} plus {max_len} tokens exceeds {decoder.max_len} positions")

    seq = prompt
    done = torch.zeros(seq.shape[0], dtype=torch.bool)
    generated: List[List[int]] = [[] for _ in range(seq.shape[0])]
    for _ in range(max_len):
        # torch.argmax returns the first maximal index
        next_ids = decoder(seq, context)[:, -1].argmax(dim=-1)
        for row, token in enumerate(next_ids.tolist()):
            if not done[row]:
                generated[row].append(token)
        done |= next_ids == eos_id
        if bool(done.all()):
            break
        seq = torch.cat((seq, next_ids[:, None]), dim=-1)

    return [TokenSequence(ids=ids, vocab_size=decoder.vocab_size) for ids in generated]
