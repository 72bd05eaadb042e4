"""
Parameterized layers and gradient verification shared by every stage.

Tensors are torch tensors in float64 unless a caller opts into float32.
Masks are boolean with True meaning "blocked".
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Optional, Tuple

import torch
from einops import rearrange
from torch import Tensor, einsum, nn

from core.errors import DegenerateMaskError, NonFiniteError, ShapeError

DEFAULT_DTYPE = torch.float64

# exp() of anything this negative is exactly 0.0 in float32 and float64
BLOCKED_LOGIT = -1e30

GRAD_CHECK_FLOOR = 1e-6


def exists(val) -> bool:
    return val is not None


def require_finite(t: Tensor, what: str, name: Optional[str] = None) -> Tensor:
    """Raise NonFiniteError unless every element of t is finite."""
    if not torch.isfinite(t).all():
        raise NonFiniteError(what, name)
    return t


def check_mask(mask: Tensor) -> None:
    """Reject masks in which some query row has no allowed key."""
    dead = mask.all(dim=-1)
    if dead.any():
        row = int(dead.nonzero()[0][-1])
        raise DegenerateMaskError(row)


def masked_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Optional[Tensor] = None,
    heads: int = 1,
    return_weights: bool = False,
):
    """
    Multi-head scaled dot-product attention under an arbitrary mask.

    Args:
        q: (..., Lq, d) queries
        k, v: (..., Lk, d) keys and values
        mask: (Lq, Lk) boolean, True = blocked; broadcast over leading dims
        heads: number of heads, must divide d

    Returns:
        (..., Lq, d) output, plus the (..., heads, Lq, Lk) weights if requested
    """
    dim = q.shape[-1]
    if dim % heads != 0:
        raise ShapeError(f"feature dim {dim} is not divisible by {heads} heads")
    if k.shape[-1] != dim or v.shape[-1] != dim or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"incompatible q/k/v shapes {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")

    q, k, v = (rearrange(t, '... n (h e) -> ... h n e', h=heads) for t in (q, k, v))
    scores = einsum('... i e, ... j e -> ... i j', q, k) * (q.shape[-1] ** -0.5)

    if exists(mask):
        if mask.shape[-2:] != scores.shape[-2:]:
            raise ShapeError(f"mask shape {tuple(mask.shape)} does not match scores {tuple(scores.shape[-2:])}")
        check_mask(mask)
        scores = scores + mask.to(scores.dtype) * BLOCKED_LOGIT

    weights = scores.softmax(dim=-1)
    out = einsum('... i j, ... j e -> ... i e', weights, v)
    out = rearrange(out, '... h n e -> ... n (h e)')
    if return_weights:
        return out, weights
    return out


class Attention(nn.Module):
    """Pre-norm multi-head attention; cross-attention when a context is given."""

    def __init__(self, dim: int, heads: int, context_dim: Optional[int] = None, dropout: float = 0.):
        super().__init__()
        if dim % heads != 0:
            raise ShapeError(f"dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.context_norm = nn.LayerNorm(context_dim) if exists(context_dim) else None
        self.to_q = nn.Linear(dim, dim)
        self.to_kv = nn.Linear(context_dim or dim, dim * 2)
        self.to_out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor, mask: Optional[Tensor] = None, context: Optional[Tensor] = None) -> Tensor:
        h = self.norm(x)
        kv_input = h if context is None else self.context_norm(context)
        q = self.to_q(h)
        k, v = self.to_kv(kv_input).chunk(2, dim=-1)
        out = masked_attention(q, k, v, mask, self.heads)
        return self.to_out(self.dropout(out))


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float = 0.):
        super().__init__()
        self.net = nn.Sequential(
            nn.LayerNorm(dim),
            nn.Linear(dim, hidden),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
        )

    @property
    def to_out(self) -> nn.Linear:
        return self.net[-1]

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class TransformerBlock(nn.Module):
    """Residual self-attention, optional cross-attention, then MLP."""

    def __init__(self, dim: int, heads: int, hidden: int, cross_attend: bool = False, dropout: float = 0.):
        super().__init__()
        self.attn = Attention(dim, heads, dropout=dropout)
        self.cross_attn = Attention(dim, heads, context_dim=dim, dropout=dropout) if cross_attend else None
        self.ff = FeedForward(dim, hidden, dropout=dropout)

    def forward(self, x, mask=None, context=None, context_mask=None):
        x = x + self.attn(x, mask)
        if exists(self.cross_attn) and exists(context):
            x = x + self.cross_attn(x, context_mask, context=context)
        return x + self.ff(x)


class TransformerStack(nn.Module):
    """
    Stack of pre-norm blocks. Output shape equals input shape.

    There is no final norm, so with every residual branch zeroed the stack
    is the identity; callers that need a final norm add their own.
    """

    def __init__(
        self,
        dim: int,
        layers: int,
        heads: int,
        hidden: int,
        cross_attend: bool = False,
        dropout: float = 0.,
    ):
        super().__init__()
        if layers < 1:
            raise ShapeError(f"transformer stack needs at least one layer, got {layers}")
        self.dim = dim
        self.heads = heads
        self.hidden = hidden
        self.blocks = nn.ModuleList([
            TransformerBlock(dim, heads, hidden, cross_attend=cross_attend, dropout=dropout)
            for _ in range(layers)
        ])

    @property
    def layers(self) -> int:
        return len(self.blocks)

    def forward(
        self,
        x: Tensor,
        mask: Optional[Tensor] = None,
        context: Optional[Tensor] = None,
        context_mask: Optional[Tensor] = None,
    ) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"input feature dim {x.shape[-1]} does not match stored params ({self.dim})")
        for block in self.blocks:
            x = block(x, mask=mask, context=context, context_mask=context_mask)
        return x

    def output_projections(self) -> Iterator[nn.Linear]:
        for block in self.blocks:
            yield block.attn.to_out
            if exists(block.cross_attn):
                yield block.cross_attn.to_out
            yield block.ff.to_out

    @torch.no_grad()
    def zero_residual_branches(self) -> None:
        """Zero every branch output projection, turning the stack into the identity."""
        for linear in self.output_projections():
            linear.weight.zero_()
            linear.bias.zero_()


class ParamStore:
    """Named parameters of a module, each with a gradient slot of the same shape."""

    def __init__(self, params: "OrderedDict[str, nn.Parameter]"):
        self.params = params

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParamStore":
        # named_parameters() yields shared parameters once, so names stay unique
        return cls(OrderedDict(module.named_parameters()))

    def __getitem__(self, name: str) -> nn.Parameter:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def numel(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def grads(self) -> Dict[str, Tensor]:
        """Gradient slot per parameter; parameters untouched by backward get zeros."""
        return {
            name: (p.grad.detach().clone() if exists(p.grad) else torch.zeros_like(p))
            for name, p in self.params.items()
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def snapshot(self) -> Dict[str, Tensor]:
        return {name: p.detach().clone() for name, p in self.params.items()}

    @torch.no_grad()
    def load(self, values: Dict[str, Tensor]) -> None:
        for name, p in self.params.items():
            if name not in values:
                raise ShapeError(f"missing parameter '{name}'")
            if tuple(values[name].shape) != tuple(p.shape):
                raise ShapeError(f"parameter '{name}' has shape {tuple(values[name].shape)}, expected {tuple(p.shape)}")
            p.copy_(values[name])


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central finite differences."""
    max_rel_error: float
    worst_param: Optional[str]
    worst_index: Optional[int]
    checked: int
    tol: float
    per_param: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def to_dict(self) -> Dict:
        return {
            "max_rel_error": self.max_rel_error,
            "worst_param": self.worst_param,
            "worst_index": self.worst_index,
            "checked": self.checked,
            "tol": self.tol,
            "passed": self.passed,
            "per_param": dict(self.per_param),
        }


def _scalar_loss(loss_fn: Callable[[], Tensor]) -> Tensor:
    loss = loss_fn()
    if loss.numel() != 1:
        raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    return require_finite(loss, "loss")


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: ParamStore,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries_per_param: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare backward() gradients of loss_fn against central differences.

    loss_fn is a closure over the module owning params. When
    max_entries_per_param is set, that many entries per parameter are
    drawn with a seeded generator instead of checking every entry.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")

    params.zero_grad()
    loss = _scalar_loss(loss_fn)
    if loss.requires_grad:
        loss.backward()
    analytic = params.grads()
    params.zero_grad()

    generator = torch.Generator().manual_seed(seed)
    per_param: Dict[str, float] = {}
    worst: Tuple[float, Optional[str], Optional[int]] = (0.0, None, None)
    checked = 0

    for name, p in params.items():
        flat = p.data.view(-1)
        grad_flat = analytic[name].view(-1)
        if exists(max_entries_per_param) and flat.numel() > max_entries_per_param:
            indices = torch.randperm(flat.numel(), generator=generator)[:max_entries_per_param].tolist()
        else:
            indices = range(flat.numel())

        param_worst = 0.0
        for i in indices:
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + eps
                plus = _scalar_loss(loss_fn).item()
                flat[i] = original - eps
                minus = _scalar_loss(loss_fn).item()
                flat[i] = original
            numeric = (plus - minus) / (2 * eps)
            exact = grad_flat[i].item()
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), GRAD_CHECK_FLOOR)
            checked += 1
            param_worst = max(param_worst, err)
            if err > worst[0]:
                worst = (err, name, i)
        per_param[name] = param_worst

    return GradCheckReport(
        max_rel_error=worst[0],
        worst_param=worst[1],
        worst_index=worst[2],
        checked=checked,
        tol=tol,
        per_param=per_param,
    )


def cosine_rows(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """
    Row-wise cosine similarity over the last dim.

    Rows where either side has L2 norm below eps score 0 and pass no gradient.
    """
    na = a.norm(dim=-1, keepdim=True)
    nb = b.norm(dim=-1, keepdim=True)
    valid = (na >= eps) & (nb >= eps)
    ones = torch.ones_like(na)
    a_unit = a / torch.where(valid, na, ones)
    b_unit = b / torch.where(valid, nb, ones)
    cos = (a_unit * b_unit).sum(dim=-1)
    return torch.where(valid.squeeze(-1), cos, torch.zeros_like(cos))


def seeded_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))
