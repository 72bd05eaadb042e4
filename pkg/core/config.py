"""
Run configuration.

Sources, lowest to highest precedence: dataclass defaults, a named
preset, a `key = value` config file, CHUNKAR_<KEY> environment variables,
command-line flags. Every merged config is validated before use.
"""
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from core.errors import ConfigError
from services.service_b_features import MODALITIES
from services.service_c_combiner_hub import COMBINER_VARIANTS as COMBINERS
from utils.synth_generator import FAMILIES
from utils.vocab import SPECIALS, TASK_WORDS

SCHEMA_VERSION = 1
ENV_PREFIX = "CHUNKAR_"

LR_SCHEDULES = ("constant", "cosine")

LOSS_WEIGHT_PRESETS: Dict[str, Tuple[float, float, float]] = {
    "pretrain": (1.0, 1.0, 1.0),
    "finetune": (1.0, 1.0, 10.0),
    "text-high": (1.0, 1.0, 10.0),
    "text-low": (1.0, 1.0, 0.1),
}


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION

    # task and media
    family: str = "which-chunk"
    frames: int = 32
    chunks: int = 4
    height: int = 16
    width: int = 16
    channels: int = 1
    fps: int = 8
    audio_rate: int = 2048
    n_mel: int = 16

    # model
    dim: int = 32
    heads: int = 4
    hidden: int = 64
    combiner: str = "ttm"
    combiner_tokens: int = 8
    combiner_layers: int = 4
    encoder_layers: int = 2
    latent_layers: int = 2
    recon_layers: int = 1
    decoder_layers: int = 2
    memory_size: int = 16
    read_size: int = 32
    process_layers: int = 2
    process_hidden: int = 64
    pool_hidden: int = 32
    tube: Tuple[int, int] = (4, 8)
    patch: int = 8
    audio_patch: Tuple[int, int] = (4, 4)
    downsample: int = 4
    modalities: str = "av"

    # training
    mask_ratio: float = 0.75
    loss_weights: str = "pretrain"
    lr: float = 1e-3
    weight_decay: float = 0.0
    betas: Tuple[float, float] = (0.9, 0.999)
    lr_schedule: str = "constant"
    batch_size: int = 8
    steps: int = 300
    eval_every: int = 50
    dropout: float = 0.0
    label_smoothing: float = 0.0

    # data
    num_clips: int = 64
    eval_clips: int = 32
    max_text_len: int = 8
    vocab_size: int = 64
    seed: int = 0
    data_dir: str = "output/data"
    out_dir: str = "output/run"

    @property
    def frames_per_chunk(self) -> int:
        return self.frames // self.chunks

    @property
    def write_size(self) -> int:
        return self.memory_size

    @property
    def weights(self) -> Tuple[float, float, float]:
        return parse_loss_weights(self.loss_weights)

    @property
    def video_features(self) -> int:
        """f: tubes plus first-frame patches per chunk."""
        if self.modalities == "audio":
            return 0
        tube_t, tube_s = self.tube
        tubes = (self.frames_per_chunk // tube_t) * (self.height // tube_s) * (self.width // tube_s)
        return tubes + (self.height // self.patch) * (self.width // self.patch)

    @property
    def audio_features(self) -> int:
        """s: spectrogram patches per chunk."""
        if self.modalities == "video":
            return 0
        return (self.frames_per_chunk // self.audio_patch[0]) * (self.n_mel // self.audio_patch[1])

    @property
    def features_per_chunk(self) -> int:
        return self.video_features + self.audio_features

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        return merge_config(self, overrides)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_text(self) -> str:
        """Render as a config file that load_config_file reads back."""
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {},
    "micro": {
        "frames": 8, "chunks": 2, "dim": 8, "heads": 2, "hidden": 16,
        "combiner_tokens": 4, "combiner_layers": 1, "encoder_layers": 1,
        "latent_layers": 1, "recon_layers": 1, "decoder_layers": 1,
        "memory_size": 4, "read_size": 4, "process_layers": 1, "process_hidden": 16,
        "pool_hidden": 8, "vocab_size": 16, "max_text_len": 5, "batch_size": 2,
        "num_clips": 4, "eval_clips": 4, "mask_ratio": 0.0,
    },
    "full": {
        "frames": 128, "chunks": 16, "height": 32, "width": 32, "dim": 768, "heads": 12,
        "hidden": 3072, "combiner_tokens": 32, "combiner_layers": 8,
        "memory_size": 256, "read_size": 512, "process_layers": 2, "process_hidden": 128,
        "lr": 1e-5, "weight_decay": 0.01, "lr_schedule": "cosine", "batch_size": 32,
        "dropout": 0.1, "label_smoothing": 0.2, "loss_weights": "finetune",
    },
}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def parse_loss_weights(value: Union[str, Tuple[float, ...]]) -> Tuple[float, float, float]:
    if isinstance(value, str):
        if value in LOSS_WEIGHT_PRESETS:
            return LOSS_WEIGHT_PRESETS[value]
        parts = [p for p in value.replace(",", " ").split() if p]
    else:
        parts = list(value)
    try:
        weights = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"loss_weights must be a preset {tuple(LOSS_WEIGHT_PRESETS)} "
                          f"or three numbers, got '{value}'") from None
    if len(weights) != 3:
        raise ConfigError(f"loss_weights needs three numbers (causal, video, text), got {len(weights)}")
    return weights


def _coerce(key: str, value: Any) -> Any:
    """Convert a raw string (file, env, flag) to the field's type."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key '{key}'")
    default = _FIELDS[key].default
    if not isinstance(value, str):
        return tuple(value) if isinstance(default, tuple) else value
    text = value.strip()
    try:
        if isinstance(default, tuple):
            return tuple(type(default[0])(p) for p in text.replace(",", " ").split())
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"config key '{key}' expects {type(default).__name__}, got '{value}'") from None
    return text


def merge_config(base: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    values = {key: _coerce(key, value) for key, value in overrides.items() if value is not None}
    return replace(base, **values)


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse `key = value` lines; `#` starts a comment. The file must carry schema_version."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: Dict[str, Any] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{number}: expected 'key = value'")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{path}:{number}: duplicate key '{key}'")
        values[key] = value.strip()
    if "schema_version" not in values:
        raise ConfigError(f"{path}: missing schema_version")
    if _coerce("schema_version", values["schema_version"]) != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version {values['schema_version']} is not {SCHEMA_VERSION}")
    return values


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    environ = os.environ if environ is None else environ
    found = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key '{key}' from environment variable {name}")
        found[key] = value
    return found


def build_config(
    preset: str = "desk",
    config_file: Optional[Union[str, Path]] = None,
    flags: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}', expected one of {tuple(PRESETS)}")
    config = merge_config(RunConfig(), PRESETS[preset])
    if config_file is not None:
        config = merge_config(config, load_config_file(config_file))
    config = merge_config(config, env_overrides(environ))
    config = merge_config(config, flags or {})
    validate_config(config)
    return config


def validate_config(config: RunConfig) -> RunConfig:
    """Raise ConfigError naming the first violated constraint."""
    if config.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {config.schema_version} is not {SCHEMA_VERSION}")
    positive = ("frames", "chunks", "height", "width", "channels", "fps", "audio_rate", "n_mel",
                "dim", "heads", "hidden", "combiner_tokens", "combiner_layers", "encoder_layers",
                "latent_layers", "recon_layers", "decoder_layers", "memory_size", "read_size",
                "process_layers", "process_hidden", "pool_hidden", "patch", "downsample",
                "batch_size", "num_clips", "eval_clips", "max_text_len", "vocab_size", "eval_every")
    for key in positive:
        if getattr(config, key) < 1:
            raise ConfigError(f"{key} must be positive, got {getattr(config, key)}")
    if config.steps < 0:
        raise ConfigError(f"steps must be non-negative, got {config.steps}")
    if min(config.tube) < 1 or min(config.audio_patch) < 1:
        raise ConfigError("tube and audio_patch sizes must be positive")
    if config.frames % config.chunks:
        raise ConfigError(f"N={config.frames} frames must be divisible by T={config.chunks} chunks")
    if config.family not in FAMILIES:
        raise ConfigError(f"family must be one of {FAMILIES}, got '{config.family}'")
    if config.combiner not in COMBINERS:
        raise ConfigError(f"combiner must be one of {COMBINERS}, got '{config.combiner}'")
    if config.modalities not in MODALITIES:
        raise ConfigError(f"modalities must be one of {MODALITIES}, got '{config.modalities}'")
    if config.lr_schedule not in LR_SCHEDULES:
        raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got '{config.lr_schedule}'")
    if config.dim % config.heads:
        raise ConfigError(f"dim {config.dim} must be divisible by heads {config.heads}")
    if config.combiner == "transformer" and config.combiner_tokens > config.features_per_chunk:
        raise ConfigError(f"m={config.combiner_tokens} exceeds the {config.features_per_chunk} "
                          f"features per chunk of the transformer combiner")
    if not 0.0 <= config.mask_ratio < 1.0:
        raise ConfigError(f"mask_ratio must be in [0, 1), got {config.mask_ratio}")
    if not 0.0 <= config.dropout < 1.0:
        raise ConfigError(f"dropout must be in [0, 1), got {config.dropout}")
    if not 0.0 <= config.label_smoothing < 1.0:
        raise ConfigError(f"label_smoothing must be in [0, 1), got {config.label_smoothing}")
    if config.lr < 0 or config.weight_decay < 0:
        raise ConfigError("lr and weight_decay must be non-negative")
    weights = config.weights
    if any(w < 0 for w in weights) or not any(w > 0 for w in weights):
        raise ConfigError(f"loss weights must be non-negative and not all zero, got {weights}")
    if config.vocab_size - len(SPECIALS) - len(TASK_WORDS) < config.chunks:
        raise ConfigError(f"vocab_size {config.vocab_size} cannot name {config.chunks} chunks")
    return config
