import pytest
import torch

from core.message import ForwardMessage
from core.model import MEDIA_STAGES, TRAIN_STAGES, MultimodalModel
from core.pipeline import Pipeline
from core.timestamp_tracker import TimestampTracker
from core.training import batch_for, prepare_clips
from utils.vocab import Vocab


@pytest.fixture
def micro_setup(micro_config):
    vocab = Vocab.default(micro_config.vocab_size)
    batch = batch_for(micro_config, prepare_clips(micro_config)[0], vocab)
    torch.manual_seed(0)
    return MultimodalModel(micro_config).eval(), batch, vocab


def test_forward_fills_every_stage(micro_setup):
    model, batch, _ = micro_setup
    msg = model(batch.video, batch.spectrogram, batch.inputs)
    assert msg.features.joint.shape == (4, 2, 12, 8)
    assert msg.combined.x.shape == (4, 2, 4, 8)
    assert msg.states.h_hat.shape == (4, 2, 4, 8)
    assert msg.recon.shape == batch.recon_target.flat().shape
    assert msg.logits.shape == (4, 4, 16)
    assert list(msg.timestamps) == TRAIN_STAGES
    assert all(d >= 0 for d in TimestampTracker.stage_durations(msg).values())


def test_media_only_forward_stops_before_the_decoder(micro_setup):
    model, batch, _ = micro_setup
    msg = model(batch.video, batch.spectrogram)
    assert list(msg.timestamps) == MEDIA_STAGES
    assert msg.logits is None and msg.recon is None


def test_eval_mode_skips_combiner_masking(micro_config):
    config = micro_config.with_overrides(mask_ratio=0.9)
    vocab = Vocab.default(config.vocab_size)
    batch = batch_for(config, prepare_clips(config)[0], vocab)
    model = MultimodalModel(config).eval()
    msg = model(batch.video, batch.spectrogram)
    assert torch.equal(msg.combined_masked.x, msg.combined.x)
    model.train()
    msg = model(batch.video, batch.spectrogram)
    assert not torch.equal(msg.combined_masked.x, msg.combined.x)


def test_zero_latents_feed_zeros_to_the_decoder(micro_setup):
    model, batch, _ = micro_setup
    msg = model(batch.video, batch.spectrogram, batch.inputs, zero_latents=True)
    expected = model.decoder(batch.inputs, torch.zeros_like(msg.states.h_hat))
    assert torch.equal(msg.logits, expected)


def test_generate_returns_one_sequence_per_clip(micro_setup):
    model, batch, vocab = micro_setup
    decoded = model.generate(batch.video, batch.spectrogram, vocab.bos_id, vocab.eos_id)
    assert len(decoded) == 4
    assert all(1 <= len(seq) <= model.config.max_text_len - 1 for seq in decoded)


def test_timeline_display(micro_setup, capsys):
    model, batch, _ = micro_setup
    msg = model(batch.video[:1], batch.spectrogram[:1], batch.inputs[:1])
    TimestampTracker.display_pipeline_execution(msg, TRAIN_STAGES)
    out = capsys.readouterr().out
    assert "Stage C: Combiner" in out and "Total Forward Duration" in out
    assert set(msg.timeline()) == set(TRAIN_STAGES)


def test_unregistered_stage_raises():
    with pytest.raises(ValueError, match="not registered"):
        Pipeline().execute_pipeline(ForwardMessage(video=torch.zeros(1)), ["combiner"])
