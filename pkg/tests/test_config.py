import pytest

from core.config import (
    PRESETS,
    RunConfig,
    build_config,
    env_overrides,
    load_config_file,
    parse_loss_weights,
    validate_config,
)
from core.errors import ConfigError


def write_config(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_desk_defaults(desk_config):
    assert (desk_config.frames, desk_config.chunks, desk_config.frames_per_chunk) == (32, 4, 8)
    assert (desk_config.video_features, desk_config.audio_features) == (12, 8)
    assert desk_config.features_per_chunk == 20
    assert desk_config.weights == (1.0, 1.0, 1.0)


def test_micro_preset_has_twelve_features_per_chunk(micro_config):
    assert micro_config.features_per_chunk == 12
    assert micro_config.combiner_tokens == 4 and micro_config.dim == 8


def test_full_scale_preset_is_valid():
    config = build_config("full", environ={})
    assert config.frames_per_chunk == 8
    assert config.weights == (1.0, 1.0, 10.0)
    assert config.weight_decay == 0.01


def test_precedence_file_then_env_then_flags(tmp_path):
    path = write_config(tmp_path, "schema_version = 1\nchunks = 8   # eight chunks\nseed = 3\nlr = 0.01\n")
    environ = {"CHUNKAR_SEED": "5", "CHUNKAR_LR": "0.02", "HOME": "/root"}
    config = build_config("desk", path, flags={"seed": 7}, environ=environ)
    assert config.chunks == 8
    assert config.lr == 0.02
    assert config.seed == 7


def test_file_needs_schema_version(tmp_path):
    with pytest.raises(ConfigError, match="schema_version"):
        load_config_file(write_config(tmp_path, "chunks = 8\n"))
    with pytest.raises(ConfigError, match="schema_version"):
        load_config_file(write_config(tmp_path, "schema_version = 2\n"))


@pytest.mark.parametrize("text, message", [
    ("schema_version = 1\nchunks = 2\nchunks = 4\n", "duplicate"),
    ("schema_version = 1\nchunks 4\n", "key = value"),
    ("schema_version = 1\ncolour = red\n", "unknown config key"),
    ("schema_version = 1\nchunks = four\n", "expects int"),
])
def test_malformed_files_raise(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        build_config("desk", write_config(tmp_path, text), environ={})


def test_config_text_round_trips(tmp_path, desk_config):
    config = desk_config.with_overrides(tube="2,4", loss_weights="finetune")
    loaded = build_config("desk", write_config(tmp_path, config.to_text()), environ={})
    assert loaded == config


def test_unknown_env_key_raises():
    with pytest.raises(ConfigError, match="CHUNKAR_COLOUR"):
        env_overrides({"CHUNKAR_COLOUR": "red"})


@pytest.mark.parametrize("overrides, message", [
    ({"chunks": 3}, "divisible"),
    ({"chunks": 0}, "positive"),
    ({"combiner": "lstm"}, "combiner"),
    ({"family": "count"}, "family"),
    ({"modalities": "text"}, "modalities"),
    ({"combiner": "transformer", "combiner_tokens": 21}, "exceeds"),
    ({"mask_ratio": 1.0}, "mask_ratio"),
    ({"dim": 30}, "divisible by heads"),
    ({"loss_weights": "0,0,0"}, "loss weights"),
    ({"lr_schedule": "step"}, "lr_schedule"),
    ({"chunks": 32, "frames": 64, "vocab_size": 16}, "cannot name"),
])
def test_invalid_configs_raise(overrides, message):
    with pytest.raises(ConfigError, match=message):
        validate_config(RunConfig().with_overrides(**overrides))


def test_unknown_preset_raises():
    with pytest.raises(ConfigError, match="preset"):
        build_config("huge", environ={})


def test_loss_weights_parse():
    assert parse_loss_weights("text-low") == (1.0, 1.0, 0.1)
    assert parse_loss_weights("1, 2, 3") == (1.0, 2.0, 3.0)
    with pytest.raises(ConfigError):
        parse_loss_weights("1,2")
    with pytest.raises(ConfigError):
        parse_loss_weights("a,b,c")


def test_every_preset_builds():
    for name in PRESETS:
        assert build_config(name, environ={}).schema_version == 1
