"""
Service C4: Token Turing Machine Combiner.

Per step t the combiner sees only u_t and its memory M_t:

    z_t     = Read(M_t, u_t)          attention pooling to read_size tokens
    o_t     = Process(z_t)            small transformer
    M_{t+1} = Write(M_t, o_t, u_t)    attention pooling to memory_size tokens
    x_t     = Output(o_t)             attention pooling to m tokens

so per-step compute and activation memory do not depend on t.
"""
from typing import List, Optional, Tuple

import torch
from torch import Tensor, einsum, nn

from core.errors import ShapeError
from core.message import CombinedLatents, TTMMemory
from services.service_c1_transformer_combiner import check_combiner_input
from utils.nn_substrate import TransformerStack, require_finite


class TokenLearner(nn.Module):
    """
    Pools a token set into `num_out` tokens with learned softmax weights
    over the input tokens. Inputs arrive as groups (memory, outputs,
    inputs, ...); each group carries a learned logit bias per output slot.
    """

    def __init__(self, dim: int, num_out: int, hidden: int, groups: int = 1):
        super().__init__()
        self.num_out = num_out
        self.norm = nn.LayerNorm(dim)
        self.score = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, num_out),
        )
        self.group_bias = nn.Parameter(torch.zeros(groups, num_out))

    def forward(self, *groups: Tensor) -> Tensor:
        if len(groups) != self.group_bias.shape[0]:
            raise ShapeError(f"expected {self.group_bias.shape[0]} token groups, got {len(groups)}")
        tokens = torch.cat(groups, dim=-2)
        bias = torch.cat([
            self.group_bias[g].expand(group.shape[-2], -1) for g, group in enumerate(groups)
        ], dim=0)
        logits = self.score(self.norm(tokens)) + bias       # (..., N, num_out)
        weights = logits.softmax(dim=-2)
        return einsum('... n k, ... n d -> ... k d', weights, tokens)


class TTMCombiner(nn.Module):
    def __init__(
        self,
        dim: int,
        m: int,
        memory_size: int = 16,
        read_size: int = 32,
        process_layers: int = 2,
        process_hidden: int = 64,
        heads: int = 4,
        pool_hidden: int = 32,
        dropout: float = 0.,
    ):
        super().__init__()
        if memory_size < 1:
            raise ShapeError(f"memory size must be at least 1, got {memory_size}")
        self.m = m
        self.memory_size = memory_size
        self.read_size = read_size
        self.memory_init = nn.Parameter(torch.randn(memory_size, dim) * 0.02)
        self.read = TokenLearner(dim, read_size, pool_hidden, groups=2)
        self.process = TransformerStack(dim, process_layers, heads, process_hidden, dropout=dropout)
        self.write = TokenLearner(dim, memory_size, pool_hidden, groups=3)
        self.output = TokenLearner(dim, m, pool_hidden, groups=1)

    def initial_memory(self, batch: int) -> TTMMemory:
        return TTMMemory(features=self.memory_init.expand(batch, -1, -1), step=1)

    def step(self, u_t: Tensor, memory: TTMMemory) -> Tuple[Tensor, TTMMemory]:
        """One TTM step on u_t (B, n, d); returns x_t (B, m, d) and M_{t+1}."""
        mem = require_finite(memory.features, "memory", f"step {memory.step}")
        z = self.read(mem, u_t)
        o = self.process(z)
        new_mem = require_finite(self.write(mem, o, u_t), "memory", f"step {memory.step + 1}")
        return self.output(o), TTMMemory(features=new_mem, step=memory.step + 1)

    def forward(
        self,
        u: Tensor,
        memory: Optional[TTMMemory] = None,
        return_memories: bool = False,
    ):
        check_combiner_input(u, 1)
        memory = memory or self.initial_memory(u.shape[0])
        outputs: List[Tensor] = []
        memories: List[TTMMemory] = []
        for u_t in u.unbind(dim=1):
            memories.append(memory)
            x_t, memory = self.step(u_t, memory)
            outputs.append(x_t)

        combined = CombinedLatents(torch.stack(outputs, dim=1))
        if return_memories:
            return combined, memories + [memory]
        return combined
