"""
Loss weighting, the optimization loop, exact-match evaluation and the
equal-total-dimension ablation.
"""
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import torch
from torch import Tensor

from core.checkpoint import load_checkpoint, restore_model, save_checkpoint
from core.config import LOSS_WEIGHT_PRESETS, RunConfig, validate_config
from core.errors import ConfigError, DatasetError, EmptyTargetError, NonFiniteError
from core.message import ForwardMessage, LossReport, MediaClip
from core.metrics import MetricsWriter
from core.model import MultimodalModel
from services.service_a_media import ClipBatch, make_batch
from services.service_d_latent_autoreg import latent_recon_loss, video_recon_loss
from services.service_e_text_decoder import text_ce_loss
from utils.dataset_io import generate_clips
from utils.synth_generator import SynthConfig
from utils.vocab import Vocab

LOSS_NAMES = ("latent", "video_recon", "text_ce")


@dataclass(frozen=True)
class LossWeights:
    causal: float = 1.0
    video: float = 1.0
    text: float = 1.0

    def __post_init__(self):
        values = (self.causal, self.video, self.text)
        if any(not math.isfinite(w) or w < 0 for w in values) or not any(w > 0 for w in values):
            raise ConfigError(f"loss weights must be finite, non-negative and not all zero, got {values}")

    @classmethod
    def preset(cls, name: str) -> "LossWeights":
        if name not in LOSS_WEIGHT_PRESETS:
            raise ConfigError(f"unknown loss weight preset '{name}', expected one of {tuple(LOSS_WEIGHT_PRESETS)}")
        return cls(*LOSS_WEIGHT_PRESETS[name])

    @classmethod
    def from_config(cls, config: RunConfig) -> "LossWeights":
        return cls(*config.weights)


def total_loss(parts: Mapping[str, Union[Tensor, float]], weights: LossWeights):
    """causal * latent + video * video_recon + text * text_ce, summed in that order."""
    for name in LOSS_NAMES:
        value = parts[name]
        finite = bool(torch.isfinite(value).all()) if isinstance(value, Tensor) else math.isfinite(value)
        if not finite:
            raise NonFiniteError("loss", name)
    return (weights.causal * parts["latent"]
            + weights.video * parts["video_recon"]
            + weights.text * parts["text_ce"])


def loss_parts(msg: ForwardMessage, batch: ClipBatch, pad_id: int,
               label_smoothing: float = 0.0) -> Dict[str, Tensor]:
    """
    Per-loss scalars for one forward message. With a single chunk there is
    no next chunk to predict, so both reconstruction losses are zero.
    """
    text = text_ce_loss(msg.logits, batch.targets, pad_id, label_smoothing)
    if msg.combined.chunks < 2:
        zero = torch.zeros((), dtype=text.dtype)
        return {"latent": zero, "video_recon": zero, "text_ce": text}
    return {
        "latent": latent_recon_loss(msg.states, msg.combined),
        "video_recon": video_recon_loss(msg.recon, batch.recon_target),
        "text_ce": text,
    }


def synth_config_for(config: RunConfig, **overrides: Any) -> SynthConfig:
    values = dict(
        family=config.family,
        frames=config.frames,
        chunks=config.chunks,
        height=config.height,
        width=config.width,
        channels=config.channels,
        fps=config.fps,
        audio_rate=config.audio_rate,
    )
    values.update(overrides)
    return SynthConfig(**values)


def prepare_clips(config: RunConfig, **overrides: Any) -> Tuple[List[MediaClip], List[MediaClip]]:
    """In-memory train and held-out clips; held-out seeds derive from seed + 1."""
    synth = synth_config_for(config, **overrides)
    return (generate_clips(synth, config.num_clips, config.seed),
            generate_clips(synth, config.eval_clips, config.seed + 1))


def batch_for(config: RunConfig, clips: Sequence[MediaClip], vocab: Vocab) -> ClipBatch:
    return make_batch(clips, config.chunks, vocab, n_mel=config.n_mel,
                      downsample=config.downsample, max_text_len=config.max_text_len)


def lr_factor(config: RunConfig) -> Callable[[int], float]:
    if config.lr_schedule == "cosine":
        total = max(config.steps, 1)
        return lambda step: 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))
    return lambda step: 1.0


def build_optimizer(model: torch.nn.Module, config: RunConfig):
    """Adam, or AdamW when weight decay is set; a LambdaLR drives the schedule."""
    if config.weight_decay > 0:
        optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr, betas=config.betas,
                                      weight_decay=config.weight_decay)
    else:
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, betas=config.betas)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_factor(config))
    return optimizer, scheduler


class Trainer:
    """Single-process training over a fixed clip set; every update is deterministic given the seed."""

    def __init__(self, config: RunConfig, clips: Sequence[MediaClip], vocab: Optional[Vocab] = None,
                 model: Optional[MultimodalModel] = None):
        validate_config(config)
        if not clips:
            raise DatasetError("no training clips")
        self.config = config
        self.vocab = vocab or Vocab.default(config.vocab_size)
        self.weights = LossWeights.from_config(config)
        torch.manual_seed(config.seed)
        self.model = model or MultimodalModel(config)
        self.optimizer, self.scheduler = build_optimizer(self.model, config)
        self.data = batch_for(config, clips, self.vocab)
        self.step = 0

    # -- batches ----------------------------------------------------------------

    def batch_indices(self, step: int) -> List[int]:
        """Indices of the batch at `step`: walk a per-epoch permutation seeded by (seed, epoch)."""
        count, size = len(self.data), self.config.batch_size
        indices = []
        for position in range(step * size, (step + 1) * size):
            epoch, offset = divmod(position, count)
            order = torch.randperm(count, generator=torch.Generator().manual_seed(self.config.seed * 7919 + epoch))
            indices.append(int(order[offset]))
        return indices

    def next_batch(self) -> ClipBatch:
        return self.data.subset(self.batch_indices(self.step))

    # -- updates ----------------------------------------------------------------

    def forward_losses(self, batch: ClipBatch) -> Tuple[ForwardMessage, Dict[str, Tensor], Tensor]:
        msg = self.model(batch.video, batch.spectrogram, batch.inputs)
        parts = loss_parts(msg, batch, self.vocab.pad_id, self.config.label_smoothing)
        return msg, parts, total_loss(parts, self.weights)

    def train_step(self, batch: Optional[ClipBatch] = None) -> LossReport:
        """One forward, one backward and one optimizer update; parameters are untouched on error."""
        batch = batch or self.next_batch()
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        _, parts, total = self.forward_losses(batch)
        total.backward()

        for name, param in self.model.named_parameters():
            if param.grad is not None and not bool(torch.isfinite(param.grad).all()):
                self.optimizer.zero_grad(set_to_none=True)
                raise NonFiniteError("gradient", name)

        self.optimizer.step()
        self.scheduler.step()
        self.step += 1

        values = {name: parts[name].detach().item() for name in LOSS_NAMES}
        return LossReport(total=total_loss(values, self.weights), step=self.step, **values)

    def fit(
        self,
        steps: int,
        writer: Optional[MetricsWriter] = None,
        eval_batch: Optional[ClipBatch] = None,
        on_report: Optional[Callable[[LossReport], None]] = None,
    ) -> List[LossReport]:
        reports = []
        for _ in range(steps):
            lr = self.optimizer.param_groups[0]["lr"]
            report = self.train_step()
            record = dict(report.to_dict(), lr=lr)
            if eval_batch is not None and report.step % self.config.eval_every == 0:
                record["accuracy"] = evaluate(self.model, eval_batch, self.vocab).accuracy
            if writer is not None:
                writer.write(record)
            if on_report is not None:
                on_report(report)
            reports.append(report)
        return reports

    # -- checkpoints ------------------------------------------------------------

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(
            path,
            self.model,
            self.config.to_dict(),
            step=self.step,
            optimizer=self.optimizer,
            scheduler=self.scheduler,
            rng_states={"torch": torch.get_rng_state()},
        )

    def restore(self, path: Union[str, Path]) -> "Trainer":
        """Load model, optimizer, schedule and RNG state so training continues where it stopped."""
        checkpoint = load_checkpoint(path)
        restore_model(self.model, checkpoint)
        if checkpoint.optimizer_state is not None:
            self.optimizer.load_state_dict(checkpoint.optimizer_state)
        if checkpoint.scheduler_state is not None:
            self.scheduler.load_state_dict(checkpoint.scheduler_state)
        if "torch" in checkpoint.rng_states:
            torch.set_rng_state(checkpoint.rng_states["torch"])
        self.step = checkpoint.step
        return self


# -- evaluation -----------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    count: int
    per_family: Dict[str, float] = field(default_factory=dict)
    predictions: List[str] = field(default_factory=list)
    zero_latents: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "count": self.count,
            "per_family": dict(self.per_family),
            "predictions": list(self.predictions),
            "zero_latents": self.zero_latents,
        }


def exact_match_accuracy(predictions: Sequence[str], targets: Sequence[str]) -> float:
    if len(predictions) != len(targets):
        raise ValueError(f"{len(predictions)} predictions for {len(targets)} targets")
    if not targets:
        raise EmptyTargetError("exact match over an empty set")
    return sum(p == t for p, t in zip(predictions, targets)) / len(targets)


def evaluate(model: MultimodalModel, batch: ClipBatch, vocab: Vocab,
             zero_latents: bool = False, batch_size: int = 32) -> EvalReport:
    """Greedy-decode every clip in eval mode and score string equality with its target."""
    if len(batch) == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    model.eval()
    predictions: List[str] = []
    for start in range(0, len(batch), batch_size):
        part = batch.subset(range(start, min(start + batch_size, len(batch))))
        decoded = model.generate(part.video, part.spectrogram, vocab.bos_id, vocab.eos_id,
                                 zero_latents=zero_latents)
        predictions.extend(vocab.decode(seq) for seq in decoded)

    by_family: Dict[str, List[Tuple[str, str]]] = defaultdict(list)
    for family, prediction, target in zip(batch.families, predictions, batch.texts):
        by_family[family].append((prediction, target))
    per_family = {
        family: exact_match_accuracy([p for p, _ in pairs], [t for _, t in pairs])
        for family, pairs in sorted(by_family.items())
    }
    return EvalReport(
        accuracy=exact_match_accuracy(predictions, batch.texts),
        count=len(batch),
        per_family=per_family,
        predictions=predictions,
        zero_latents=zero_latents,
    )


# -- equal-total-dimension ablation ---------------------------------------------

def equal_dim_baseline(config: RunConfig) -> RunConfig:
    """One chunk carrying all T * m combiner dimensions."""
    return config.with_overrides(chunks=1, combiner_tokens=config.chunks * config.combiner_tokens)


def total_combiner_dims(config: RunConfig) -> int:
    return config.chunks * config.combiner_tokens


def ablation_equal_dims(
    autoregressive: RunConfig,
    baseline: Optional[RunConfig] = None,
    clips: Optional[Tuple[Sequence[MediaClip], Sequence[MediaClip]]] = None,
    steps: Optional[int] = None,
) -> Dict[str, Any]:
    """
    Train the T-chunk model and the single-chunk model of equal total
    combiner dimensions on the same clips and report both accuracies.
    """
    baseline = baseline or equal_dim_baseline(autoregressive)
    dims_a, dims_b = total_combiner_dims(autoregressive), total_combiner_dims(baseline)
    if dims_a != dims_b:
        raise ConfigError(f"ablation needs equal total combiner dims, got {dims_a} and {dims_b}")
    if autoregressive.frames != baseline.frames:
        raise ConfigError("ablation configs must share the clip length")

    train_clips, eval_clips = clips or prepare_clips(autoregressive)
    vocab = Vocab.default(autoregressive.vocab_size)
    rows = {}
    for label, config in (("autoregressive", autoregressive), ("baseline", baseline)):
        trainer = Trainer(config, train_clips, vocab)
        reports = trainer.fit(config.steps if steps is None else steps)
        result = evaluate(trainer.model, batch_for(config, eval_clips, vocab), vocab)
        rows[label] = {
            "chunks": config.chunks,
            "combiner_tokens": config.combiner_tokens,
            "total_dims": total_combiner_dims(config),
            "steps": len(reports),
            "final_loss": reports[-1].total if reports else None,
            "accuracy": result.accuracy,
            "per_family": result.per_family,
        }
    return {
        "family": autoregressive.family,
        "combiner": autoregressive.combiner,
        "seed": autoregressive.seed,
        "total_dims": dims_a,
        "autoregressive": rows["autoregressive"],
        "baseline": rows["baseline"],
    }
