"""
Stage B: Feature Extraction.

Maps raw chunk pixels and spectrograms to per-chunk features and joins
them into u_t. Video uses one 3D tube kernel plus 2D patches on the
chunk's first frame; audio uses spectrogram patches behind its own input
projection. Both run through the same transformer backbone.
"""
from typing import Optional, Tuple

import torch
from einops import rearrange
from torch import Tensor, nn

from core.errors import ConfigError, ShapeError
from core.message import ChunkFeatures
from utils.nn_substrate import TransformerStack

MODALITIES = ("av", "video", "audio")


def concat_chunk(video_feat: Optional[Tensor], audio_feat: Optional[Tensor]) -> Tensor:
    """u_t = video features followed by audio features along the token axis."""
    if video_feat is None or audio_feat is None:
        joint = video_feat if audio_feat is None else audio_feat
        if joint is None:
            raise ShapeError("at least one modality is needed")
        return joint
    if video_feat.shape[-1] != audio_feat.shape[-1]:
        raise ShapeError(f"video dim {video_feat.shape[-1]} != audio dim {audio_feat.shape[-1]}")
    if video_feat.shape[:-2] != audio_feat.shape[:-2]:
        raise ShapeError(f"leading shapes differ: {tuple(video_feat.shape[:-2])} vs {tuple(audio_feat.shape[:-2])}")
    return torch.cat((video_feat, audio_feat), dim=-2)


def split_chunk(joint: Tensor, f: int) -> Tuple[Tensor, Tensor]:
    return joint[..., :f, :], joint[..., f:, :]


class FeatureExtractor(nn.Module):
    def __init__(
        self,
        *,
        dim: int,
        frames_per_chunk: int,
        height: int,
        width: int,
        channels: int,
        n_mel: int,
        tube: Tuple[int, int] = (4, 8),         # (temporal, spatial)
        patch: int = 8,
        audio_patch: Tuple[int, int] = (4, 4),  # (time, mel)
        layers: int = 2,
        heads: int = 4,
        hidden: int = 64,
        modalities: str = "av",
        dropout: float = 0.,
    ):
        super().__init__()
        if modalities not in MODALITIES:
            raise ConfigError(f"unknown modalities '{modalities}', expected one of {MODALITIES}")
        tube_t, tube_s = tube
        audio_pt, audio_pm = audio_patch
        if frames_per_chunk < tube_t or height < tube_s or width < tube_s:
            raise ShapeError(f"chunk ({frames_per_chunk}x{height}x{width}) is smaller than the "
                             f"{tube_t}x{tube_s}x{tube_s} tube kernel")
        if height % tube_s or width % tube_s or height % patch or width % patch:
            raise ShapeError(f"frame {height}x{width} is not divisible by tube {tube_s} and patch {patch}")
        if frames_per_chunk % audio_pt or n_mel % audio_pm:
            raise ShapeError(f"spectrogram chunk ({frames_per_chunk}x{n_mel}) is not divisible by "
                             f"audio patch {audio_pt}x{audio_pm}")

        self.dim = dim
        self.modalities = modalities
        self.frames_per_chunk = frames_per_chunk
        self.frame_shape = (height, width, channels)
        self.n_mel = n_mel
        self.tube = tube
        self.patch = patch
        self.audio_patch = audio_patch

        self.num_tubes = (frames_per_chunk // tube_t) * (height // tube_s) * (width // tube_s)
        self.num_patches = (height // patch) * (width // patch)
        self.num_audio_patches = (frames_per_chunk // audio_pt) * (n_mel // audio_pm)

        # video-specific embeddings; tubes and 2D patches get separate position tables
        self.tube_embed = nn.Linear(tube_t * tube_s * tube_s * channels, dim)
        self.patch_embed = nn.Linear(patch * patch * channels, dim)
        self.tube_pos = nn.Parameter(torch.randn(self.num_tubes, dim) * 0.02)
        self.patch_pos = nn.Parameter(torch.randn(self.num_patches, dim) * 0.02)

        # audio input projection
        self.audio_proj = nn.Linear(audio_pt * audio_pm, dim)
        self.audio_pos = nn.Parameter(torch.randn(self.num_audio_patches, dim) * 0.02)

        # shared backbone
        self.backbone = TransformerStack(dim, layers, heads, hidden, dropout=dropout)
        self.norm = nn.LayerNorm(dim)

    @property
    def video_tokens_per_chunk(self) -> int:
        return self.num_tubes + self.num_patches if self.modalities != "audio" else 0

    @property
    def audio_tokens_per_chunk(self) -> int:
        return self.num_audio_patches if self.modalities != "video" else 0

    @property
    def tokens_per_chunk(self) -> int:
        return self.video_tokens_per_chunk + self.audio_tokens_per_chunk

    def video_tokens(self, chunk: Tensor, with_positions: bool = True) -> Tensor:
        """(..., K, H, W, C) -> (..., f, d) embedded tubes followed by first-frame patches."""
        if tuple(chunk.shape[-3:]) != self.frame_shape or chunk.shape[-4] != self.frames_per_chunk:
            raise ShapeError(f"video chunk shape {tuple(chunk.shape[-4:])} does not match "
                             f"({self.frames_per_chunk}, {', '.join(map(str, self.frame_shape))})")
        tube_t, tube_s = self.tube
        usable = (chunk.shape[-4] // tube_t) * tube_t
        tubes = rearrange(chunk[..., :usable, :, :, :],
                          '... (kt pt) (ht ph) (wt pw) c -> ... (kt ht wt) (pt ph pw c)',
                          pt=tube_t, ph=tube_s, pw=tube_s)
        patches = rearrange(chunk[..., 0, :, :, :],
                            '... (ht ph) (wt pw) c -> ... (ht wt) (ph pw c)',
                            ph=self.patch, pw=self.patch)
        tubes = self.tube_embed(tubes)
        patches = self.patch_embed(patches)
        if with_positions:
            tubes = tubes + self.tube_pos
            patches = patches + self.patch_pos
        return torch.cat((tubes, patches), dim=-2)

    def audio_tokens(self, spec_chunk: Tensor, with_positions: bool = True) -> Tensor:
        """(..., K, n_mel) -> (..., s, d) projected spectrogram patches."""
        if tuple(spec_chunk.shape[-2:]) != (self.frames_per_chunk, self.n_mel):
            raise ShapeError(f"spectrogram chunk shape {tuple(spec_chunk.shape[-2:])} does not match "
                             f"({self.frames_per_chunk}, {self.n_mel})")
        pt, pm = self.audio_patch
        patches = rearrange(spec_chunk, '... (kt pt) (mt pm) -> ... (kt mt) (pt pm)', pt=pt, pm=pm)
        tokens = self.audio_proj(patches)
        return tokens + self.audio_pos if with_positions else tokens

    def encode(self, tokens: Tensor) -> Tensor:
        # full attention inside one chunk; chunks never see each other here
        return self.norm(self.backbone(tokens))

    def extract_video_features(self, chunk: Tensor) -> Tensor:
        return self.encode(self.video_tokens(chunk))

    def extract_audio_features(self, spec_chunk: Tensor) -> Tensor:
        return self.encode(self.audio_tokens(spec_chunk))

    def forward(self, video: Optional[Tensor], spectrogram: Optional[Tensor]) -> ChunkFeatures:
        """video (B, T, K, H, W, C), spectrogram (B, T, K, n_mel) -> features per chunk."""
        video_feat = self.extract_video_features(video) if self.modalities != "audio" else None
        audio_feat = self.extract_audio_features(spectrogram) if self.modalities != "video" else None
        return ChunkFeatures(video=video_feat, audio=audio_feat, joint=concat_chunk(video_feat, audio_feat))
