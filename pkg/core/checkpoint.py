"""
Versioned checkpoints written with torch.save.

One dict per file:

    format   CHECKPOINT_TAG
    version  CHECKPOINT_VERSION
    step, config, params (name -> tensor), optim, scheduler, rng

Tensors are stored bit-exact, so reading a checkpoint back restores every
value and two identical runs produce identical files.
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch
from torch import Tensor, nn

from core.errors import CheckpointError

CHECKPOINT_TAG = "chunkar-checkpoint"
CHECKPOINT_VERSION = 2


@dataclass
class Checkpoint:
    step: int
    config: Dict[str, Any]
    model_state: "OrderedDict[str, Tensor]"
    optimizer_state: Optional[Dict[str, Any]] = None
    scheduler_state: Optional[Dict[str, Any]] = None
    rng_states: Dict[str, Tensor] = field(default_factory=dict)


def save_checkpoint(
    path: Union[str, Path],
    model: nn.Module,
    config: Dict[str, Any],
    step: int = 0,
    optimizer: Optional[torch.optim.Optimizer] = None,
    scheduler: Optional[Any] = None,
    rng_states: Optional[Dict[str, Tensor]] = None,
) -> Path:
    path = Path(path)
    params = OrderedDict((name, tensor.detach().cpu().clone()) for name, tensor in model.state_dict().items())
    payload = {
        "format": CHECKPOINT_TAG,
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "config": config,
        "params": params,
        "optim": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "rng": dict(sorted((rng_states or {}).items())),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"cannot read checkpoint {path}: no such file")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_TAG:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_TAG!r} checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} has checkpoint version {payload.get('version')}, "
                              f"expected {CHECKPOINT_VERSION}")
    try:
        return Checkpoint(
            step=int(payload["step"]),
            config=payload["config"],
            model_state=OrderedDict(payload["params"]),
            optimizer_state=payload.get("optim"),
            scheduler_state=payload.get("scheduler"),
            rng_states=dict(payload.get("rng") or {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e


def restore_model(model: nn.Module, checkpoint: Checkpoint) -> nn.Module:
    """Copy stored parameters into `model`, rejecting missing, extra or reshaped entries."""
    expected = model.state_dict()
    missing = sorted(set(expected) - set(checkpoint.model_state))
    unexpected = sorted(set(checkpoint.model_state) - set(expected))
    if missing or unexpected:
        raise CheckpointError(f"checkpoint does not fit the model: missing {missing}, unexpected {unexpected}")
    for name, tensor in checkpoint.model_state.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise CheckpointError(f"parameter '{name}' has shape {tuple(tensor.shape)} in the checkpoint, "
                                  f"model expects {tuple(expected[name].shape)}")
    model.load_state_dict(checkpoint.model_state)
    return model
