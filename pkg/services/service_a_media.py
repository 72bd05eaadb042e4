"""
Stage A: Media partitioning and batching.

Splits each clip into T non-overlapping, time-aligned chunks and stacks a
list of clips into the tensors the model stages consume.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
from einops import rearrange
from torch import Tensor

from core.errors import ShapeError
from core.message import ChunkedClip, MediaClip, ReconTarget
from services.service_d_latent_autoreg import downsample_video
from utils.nn_substrate import DEFAULT_DTYPE
from utils.spectrogram import make_spectrogram
from utils.vocab import Vocab


def partition_media(clip: MediaClip, chunks: int, n_mel: int = 16) -> ChunkedClip:
    """
    Chunk t (1-based) holds frames (t-1)K+1 .. tK with K = N / T, and the
    spectrogram bands of exactly the same frame periods.
    """
    clip.validate(chunks)
    n = clip.num_frames
    if n % chunks != 0:
        raise ShapeError(f"N={n} frames are not divisible into T={chunks} chunks")
    per_chunk = n // chunks

    spectrogram = make_spectrogram(clip.audio, clip.fps, n_mel, clip.audio_rate, n)
    video_chunks = [clip.frames[t * per_chunk:(t + 1) * per_chunk] for t in range(chunks)]
    audio_chunks = [spectrogram[t * per_chunk:(t + 1) * per_chunk] for t in range(chunks)]
    intervals = [(t * per_chunk / clip.fps, (t + 1) * per_chunk / clip.fps) for t in range(chunks)]

    return ChunkedClip(
        video_chunks=video_chunks,
        audio_chunks=audio_chunks,
        chunk_count=chunks,
        intervals=intervals,
    )


@dataclass
class ClipBatch:
    """Stacked model inputs for B clips."""
    video: Tensor                # (B, T, K, H, W, C)
    spectrogram: Tensor          # (B, T, K, n_mel)
    recon_target: ReconTarget    # v_small (B, T, K, h, w, C)
    tokens: Tensor               # (B, L) BOS .. EOS then PAD
    texts: List[str] = field(default_factory=list)
    families: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.video.shape[0])

    @property
    def inputs(self) -> Tensor:
        return self.tokens[:, :-1]

    @property
    def targets(self) -> Tensor:
        return self.tokens[:, 1:]

    def subset(self, index: Sequence[int]) -> "ClipBatch":
        idx = torch.as_tensor(list(index), dtype=torch.long)
        return ClipBatch(
            video=self.video[idx],
            spectrogram=self.spectrogram[idx],
            recon_target=ReconTarget(self.recon_target.v_small[idx], self.recon_target.factor),
            tokens=self.tokens[idx],
            texts=[self.texts[i] for i in idx.tolist()],
            families=[self.families[i] for i in idx.tolist()],
        )


def pad_token_rows(rows: List[List[int]], pad_id: int, length: Optional[int] = None) -> Tensor:
    length = length or max(len(r) for r in rows)
    if any(len(r) > length for r in rows):
        raise ShapeError(f"text of {max(len(r) for r in rows)} tokens exceeds max length {length}")
    return torch.tensor([r + [pad_id] * (length - len(r)) for r in rows], dtype=torch.long)


def make_batch(
    clips: Sequence[MediaClip],
    chunks: int,
    vocab: Vocab,
    n_mel: int = 16,
    downsample: int = 4,
    max_text_len: Optional[int] = None,
    dtype: torch.dtype = DEFAULT_DTYPE,
) -> ClipBatch:
    if not clips:
        raise ShapeError("cannot batch an empty list of clips")
    chunked = [partition_media(clip, chunks, n_mel) for clip in clips]

    video = torch.as_tensor(np.stack([np.stack(c.video_chunks) for c in chunked]), dtype=dtype)
    spectrogram = torch.as_tensor(np.stack([np.stack(c.audio_chunks) for c in chunked]), dtype=dtype)
    tokens = pad_token_rows([vocab.encode(clip.text).ids for clip in clips], vocab.pad_id, max_text_len)

    return ClipBatch(
        video=video,
        spectrogram=spectrogram,
        recon_target=downsample_video(video, downsample),
        tokens=tokens,
        texts=[clip.text for clip in clips],
        families=[clip.family for clip in clips],
    )


def reassemble_frames(chunked: ChunkedClip) -> np.ndarray:
    """Concatenate the video chunks back into the (N, H, W, C) clip."""
    return rearrange(np.stack(chunked.video_chunks), 't k h w c -> (t k) h w c')
