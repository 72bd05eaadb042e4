"""
Learning-trend checks at desk scale. These train real models for minutes
and are deselected by default; run them with `pytest -m slow`.
"""
import json

import pytest

from core.config import build_config
from core.training import Trainer, ablation_equal_dims, batch_for, evaluate, prepare_clips
from main import main
from utils.vocab import Vocab

pytestmark = pytest.mark.slow


def train_and_evaluate(config, zero_latents=False):
    train_clips, eval_clips = prepare_clips(config)
    vocab = Vocab.default(config.vocab_size)
    trainer = Trainer(config, train_clips, vocab)
    trainer.fit(config.steps)
    batch = batch_for(config, eval_clips, vocab)
    result = evaluate(trainer.model, batch, vocab)
    if zero_latents:
        return result, evaluate(trainer.model, batch, vocab, zero_latents=True)
    return result


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_chunked_model_beats_the_equal_dimension_baseline(seed):
    config = build_config("desk", flags={
        "family": "order", "chunks": 8, "combiner_tokens": 8, "steps": 2000,
        "seed": seed, "num_clips": 256, "eval_clips": 64,
    }, environ={})
    report = ablation_equal_dims(config)
    assert report["baseline"]["chunks"] == 1 and report["baseline"]["combiner_tokens"] == 64
    assert report["autoregressive"]["accuracy"] >= 0.9
    assert report["autoregressive"]["accuracy"] > report["baseline"]["accuracy"]


def test_audio_is_needed_for_the_audio_gated_family():
    flags = {"family": "audio-gated", "steps": 1000, "num_clips": 256, "eval_clips": 64}
    both = train_and_evaluate(build_config("desk", flags=flags, environ={}))
    video_only = train_and_evaluate(build_config("desk", flags=dict(flags, modalities="video"), environ={}))
    assert both.accuracy - video_only.accuracy >= 0.2


def test_zeroed_states_drop_which_chunk_accuracy_to_chance():
    config = build_config("desk", flags={"family": "which-chunk", "steps": 1000, "num_clips": 256,
                                         "eval_clips": 64}, environ={})
    trained, zeroed = train_and_evaluate(config, zero_latents=True)
    assert trained.accuracy >= 0.9
    assert zeroed.accuracy <= 1.0 / config.chunks + 0.1


def test_cli_three_hundred_step_run(tmp_path):
    data, out = tmp_path / "data", tmp_path / "run"
    assert main(["gen", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--out", str(out), "--steps", "300"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 300
    assert summary["final"]["total"] < json.loads((out / "metrics.jsonl").read_text().splitlines()[0])["total"]
