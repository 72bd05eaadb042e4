"""
Service C: Combiner Hub.

Selects one of the four interchangeable combiner variants by config key
and applies random masking to its outputs during training.
"""
from typing import Optional

import torch
from torch import nn

from core.errors import ConfigError
from core.message import CombinedLatents
from services.service_c1_transformer_combiner import TransformerCombiner
from services.service_c2_cls_combiner import CLSCombiner
from services.service_c3_perceiver_combiner import PerceiverCombiner
from services.service_c4_ttm_combiner import TTMCombiner

COMBINER_VARIANTS = ("transformer", "cls", "perceiver", "ttm")


def build_combiner(
    variant: str,
    *,
    dim: int,
    m: int,
    layers: int,
    heads: int,
    hidden: int,
    memory_size: int = 16,
    read_size: int = 32,
    process_layers: int = 2,
    process_hidden: int = 64,
    pool_hidden: int = 32,
    dropout: float = 0.,
) -> nn.Module:
    if variant == "transformer":
        return TransformerCombiner(dim, m, layers, heads, hidden, dropout=dropout)
    if variant == "cls":
        return CLSCombiner(dim, m, layers, heads, hidden, dropout=dropout)
    if variant == "perceiver":
        return PerceiverCombiner(dim, m, layers, heads, hidden, dropout=dropout)
    if variant == "ttm":
        return TTMCombiner(
            dim, m,
            memory_size=memory_size,
            read_size=read_size,
            process_layers=process_layers,
            process_hidden=process_hidden,
            heads=heads,
            pool_hidden=pool_hidden,
            dropout=dropout,
        )
    raise ConfigError(f"unknown combiner '{variant}', expected one of {COMBINER_VARIANTS}")


def mask_combiner_outputs(
    x: CombinedLatents,
    ratio: float,
    generator: Optional[torch.Generator] = None,
    training: bool = True,
) -> CombinedLatents:
    """
    Zero each of the T*m output features independently with probability
    `ratio` in training mode; identity in eval mode. No rescaling.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"combiner mask ratio must be in [0, 1), got {ratio}")
    if not training or ratio == 0.0:
        return x
    draw = torch.rand(x.x.shape[:-1], generator=generator, dtype=x.x.dtype)
    keep = (draw >= ratio).to(x.x.dtype).unsqueeze(-1)
    return CombinedLatents(x.x * keep)
