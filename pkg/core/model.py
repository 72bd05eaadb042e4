"""
The assembled model: stages B to E wired through the stage Pipeline.
"""
from typing import List, Optional

import torch
from torch import Tensor, nn

from core.config import RunConfig, validate_config
from core.message import ForwardMessage, LatentStates, TokenSequence
from core.pipeline import Pipeline
from services.service_b_features import FeatureExtractor
from services.service_c_combiner_hub import build_combiner, mask_combiner_outputs
from services.service_d_latent_autoreg import LatentCausalModel, ReconDecoder
from services.service_e_text_decoder import TextDecoder, greedy_decode
from utils.nn_substrate import DEFAULT_DTYPE

MEDIA_STAGES = ["feature_extract", "combiner", "latent_autoreg"]
TRAIN_STAGES = MEDIA_STAGES + ["recon", "text_decoder"]


class MultimodalModel(nn.Module):
    def __init__(self, config: RunConfig, dtype: torch.dtype = DEFAULT_DTYPE):
        super().__init__()
        validate_config(config)
        self.config = config
        small = (config.height // config.downsample) * (config.width // config.downsample)

        self.features = FeatureExtractor(
            dim=config.dim,
            frames_per_chunk=config.frames_per_chunk,
            height=config.height,
            width=config.width,
            channels=config.channels,
            n_mel=config.n_mel,
            tube=config.tube,
            patch=config.patch,
            audio_patch=config.audio_patch,
            layers=config.encoder_layers,
            heads=config.heads,
            hidden=config.hidden,
            modalities=config.modalities,
            dropout=config.dropout,
        )
        self.combiner = build_combiner(
            config.combiner,
            dim=config.dim,
            m=config.combiner_tokens,
            layers=config.combiner_layers,
            heads=config.heads,
            hidden=config.hidden,
            memory_size=config.memory_size,
            read_size=config.read_size,
            process_layers=config.process_layers,
            process_hidden=config.process_hidden,
            pool_hidden=config.pool_hidden,
            dropout=config.dropout,
        )
        self.latent = LatentCausalModel(
            config.dim, config.latent_layers, config.heads, config.hidden,
            max_chunks=max(config.chunks, 64), dropout=config.dropout,
        )
        self.recon = ReconDecoder(
            config.dim, config.combiner_tokens,
            out_features=config.frames_per_chunk * small * config.channels,
            layers=config.recon_layers, heads=config.heads, hidden=config.hidden,
            dropout=config.dropout,
        )
        self.decoder = TextDecoder(
            config.vocab_size, config.dim, config.decoder_layers, config.heads, config.hidden,
            max_len=config.max_text_len, dropout=config.dropout,
        )
        self.to(dtype)

        self.pipeline = Pipeline()
        self.pipeline.register_stage("feature_extract", self._feature_stage)
        self.pipeline.register_stage("combiner", self._combiner_stage)
        self.pipeline.register_stage("latent_autoreg", self._latent_stage)
        self.pipeline.register_stage("recon", self._recon_stage)
        self.pipeline.register_stage("text_decoder", self._text_stage)

    # -- stages ---------------------------------------------------------------

    def _feature_stage(self, msg: ForwardMessage) -> ForwardMessage:
        msg.features = self.features(msg.video, msg.spectrogram)
        return msg

    def _combiner_stage(self, msg: ForwardMessage) -> ForwardMessage:
        msg.combined = self.combiner(msg.features.joint)
        msg.combined_masked = mask_combiner_outputs(msg.combined, self.config.mask_ratio, training=msg.training)
        return msg

    def _latent_stage(self, msg: ForwardMessage) -> ForwardMessage:
        msg.states = self.latent(msg.combined_masked)
        return msg

    def _recon_stage(self, msg: ForwardMessage) -> ForwardMessage:
        msg.recon = self.recon(msg.states)
        return msg

    def _text_stage(self, msg: ForwardMessage) -> ForwardMessage:
        msg.logits = self.decoder(msg.tokens, self.decoder_context(msg))
        return msg

    @staticmethod
    def decoder_context(msg: ForwardMessage) -> LatentStates:
        if msg.zero_latents:
            return LatentStates(torch.zeros_like(msg.states.h_hat))
        return msg.states

    # -- entry points ---------------------------------------------------------

    def forward(
        self,
        video: Tensor,
        spectrogram: Optional[Tensor],
        tokens: Optional[Tensor] = None,
        zero_latents: bool = False,
    ) -> ForwardMessage:
        """Full forward pass; stops after the media stages when no tokens are given."""
        msg = ForwardMessage(
            video=video,
            spectrogram=spectrogram,
            tokens=tokens,
            training=self.training,
            zero_latents=zero_latents,
        )
        chain = TRAIN_STAGES if tokens is not None else MEDIA_STAGES
        return self.pipeline.execute_pipeline(msg, chain)

    @torch.no_grad()
    def generate(
        self,
        video: Tensor,
        spectrogram: Optional[Tensor],
        bos_id: int,
        eos_id: int,
        max_len: Optional[int] = None,
        zero_latents: bool = False,
    ) -> List[TokenSequence]:
        msg = self.forward(video, spectrogram, zero_latents=zero_latents)
        prompt = torch.full((video.shape[0], 1), bos_id, dtype=torch.long)
        max_len = max_len or self.config.max_text_len - 1
        return greedy_decode(self.decoder, prompt, self.decoder_context(msg), max_len, eos_id)
