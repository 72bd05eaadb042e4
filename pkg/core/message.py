"""
Data passed between pipeline stages, with per-stage timestamp tracking.
"""
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
from torch import Tensor

from core.errors import ShapeError


@dataclass
class TimestampRecord:
    """Record of timestamps for one stage invocation."""
    stage_name: str
    received_time: Optional[float] = None  # Unix timestamp when input arrived
    start_time: Optional[float] = None     # Unix timestamp when processing started
    end_time: Optional[float] = None       # Unix timestamp when processing completed

    @property
    def duration_ms(self) -> Optional[float]:
        if self.start_time is None or self.end_time is None:
            return None
        return (self.end_time - self.start_time) * 1000

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary with formatted timestamps."""
        result: Dict[str, Any] = {"stage_name": self.stage_name}

        if self.received_time:
            result["received"] = datetime.fromtimestamp(self.received_time).isoformat()
            result["received_timestamp"] = self.received_time

        if self.start_time:
            result["started"] = datetime.fromtimestamp(self.start_time).isoformat()
            result["started_timestamp"] = self.start_time

        if self.end_time:
            result["completed"] = datetime.fromtimestamp(self.end_time).isoformat()
            result["completed_timestamp"] = self.end_time

        if self.duration_ms is not None:
            result["duration_ms"] = round(self.duration_ms, 2)

        return result


# -- media -------------------------------------------------------------------

@dataclass
class MediaClip:
    """Synthetic video frames, aligned audio and the target answer text."""
    frames: np.ndarray          # (N, H, W, C) in [0, 1]
    audio: np.ndarray           # (M,) in [-1, 1]
    text: str
    fps: int
    audio_rate: int
    family: str = ""
    seed: int = 0
    events: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def samples_per_frame(self) -> int:
        return self.audio_rate // self.fps

    def validate(self, chunks: int) -> None:
        if self.frames.ndim != 4:
            raise ShapeError(f"frames must be (N, H, W, C), got {self.frames.shape}")
        if self.num_frames < chunks:
            raise ShapeError(f"{self.num_frames} frames cannot fill {chunks} chunks")
        video_seconds = self.num_frames / self.fps
        audio_seconds = self.audio.shape[0] / self.audio_rate
        if abs(video_seconds - audio_seconds) > 1.0 / self.fps:
            raise ShapeError(f"audio lasts {audio_seconds:.3f}s but video lasts {video_seconds:.3f}s")


@dataclass
class ChunkedClip:
    """A clip split into T non-overlapping, time-aligned chunks."""
    video_chunks: List[np.ndarray]   # T x (K, H, W, C)
    audio_chunks: List[np.ndarray]   # T x (K, n_mel)
    chunk_count: int
    intervals: List[tuple] = field(default_factory=list)  # T x (start_s, end_s)

    @property
    def frames_per_chunk(self) -> int:
        return int(self.video_chunks[0].shape[0])


# -- model states ------------------------------------------------------------

@dataclass
class ChunkFeatures:
    """Per-chunk features: video (.., f, d), audio (.., s, d), joint (.., n, d)."""
    video: Optional[Tensor]
    audio: Optional[Tensor]
    joint: Tensor

    @property
    def f(self) -> int:
        return 0 if self.video is None else int(self.video.shape[-2])

    @property
    def s(self) -> int:
        return 0 if self.audio is None else int(self.audio.shape[-2])


@dataclass
class CombinedLatents:
    """Combiner outputs x stacked as (B, T, m, d)."""
    x: Tensor

    @property
    def chunks(self) -> int:
        return int(self.x.shape[-3])

    @property
    def m(self) -> int:
        return int(self.x.shape[-2])

    def as_list(self) -> List[Tensor]:
        return list(self.x.unbind(dim=-3))


@dataclass
class TTMMemory:
    """External memory of the TTM combiner before processing step `step` (1-based)."""
    features: Tensor   # (B, mem_size, d)
    step: int = 1


@dataclass
class LatentStates:
    """Latent causal model outputs h_hat stacked as (B, T, m, d)."""
    h_hat: Tensor

    @property
    def chunks(self) -> int:
        return int(self.h_hat.shape[-3])

    def as_list(self) -> List[Tensor]:
        return list(self.h_hat.unbind(dim=-3))


@dataclass
class ReconTarget:
    """Spatially downsampled video chunks (B, T, K, h, w, C)."""
    v_small: Tensor
    factor: int

    def flat(self) -> Tensor:
        return self.v_small.flatten(start_dim=-4)


@dataclass
class TokenSequence:
    ids: List[int]
    vocab_size: int

    def __post_init__(self):
        bad = [i for i in self.ids if not 0 <= i < self.vocab_size]
        if bad:
            raise ShapeError(f"token ids {bad} outside vocabulary of size {self.vocab_size}")

    def __len__(self) -> int:
        return len(self.ids)


# -- losses ------------------------------------------------------------------

@dataclass
class LossReport:
    """Per-loss scalars and their weighted total for one step."""
    latent: float
    video_recon: float
    text_ce: float
    total: float
    step: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "latent": self.latent,
            "video_recon": self.video_recon,
            "text_ce": self.text_ce,
            "total": self.total,
        }


@dataclass
class ForwardMessage:
    """Message passed between model stages during one forward pass."""
    # Inputs
    video: Tensor                               # (B, T, K, H, W, C)
    spectrogram: Optional[Tensor] = None        # (B, T, K, n_mel)
    tokens: Optional[Tensor] = None             # (B, L) decoder input ids
    training: bool = False
    zero_latents: bool = False

    # Stage results
    features: Optional[ChunkFeatures] = None
    combined: Optional[CombinedLatents] = None
    combined_masked: Optional[CombinedLatents] = None
    states: Optional[LatentStates] = None
    recon: Optional[Tensor] = None              # (B, T, P) flattened v_small predictions
    logits: Optional[Tensor] = None             # (B, L, vocab)

    # Timestamp tracking
    timestamps: Dict[str, TimestampRecord] = field(default_factory=dict)

    def add_timestamp(self, stage_name: str) -> TimestampRecord:
        """Create and add a new timestamp record for a stage."""
        if stage_name not in self.timestamps:
            self.timestamps[stage_name] = TimestampRecord(stage_name=stage_name)
        return self.timestamps[stage_name]

    def get_timestamp(self, stage_name: str) -> Optional[TimestampRecord]:
        return self.timestamps.get(stage_name)

    def timeline(self) -> Dict[str, Any]:
        return {name: ts.to_dict() for name, ts in self.timestamps.items()}
