"""
Synthetic aligned video/audio/text clips whose answers need cross-chunk temporal structure.

Task families:
    which-chunk  a bright moving square appears in exactly one chunk; answer "chunk <t>"
    order        events "a" (filled square) and "b" (hollow square) in different chunks;
                 answer "first a" or "first b"
    audio-gated  one visual event; answer "tone yes" iff a tone burst sounds in the same
                 chunk, so video alone cannot decide it
"""
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Tuple

import numpy as np

from core.errors import ConfigError, ShapeError
from core.message import MediaClip

FAMILIES = ("which-chunk", "order", "audio-gated")
TONE_MODES = ("random", "co-occur", "absent", "elsewhere")


@dataclass(frozen=True)
class SynthConfig:
    family: str = "which-chunk"
    frames: int = 32            # N
    chunks: int = 4             # T
    height: int = 16
    width: int = 16
    channels: int = 1
    fps: int = 8
    audio_rate: int = 2048
    square: int = 4
    video_noise: float = 0.05
    audio_noise: float = 0.01
    tone_hz: float = 440.0
    tone_amplitude: float = 0.5
    tone_mode: str = "random"

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown task family '{self.family}', expected one of {FAMILIES}")
        if self.tone_mode not in TONE_MODES:
            raise ConfigError(f"unknown tone mode '{self.tone_mode}', expected one of {TONE_MODES}")
        if self.chunks <= 0 or self.frames < self.chunks:
            raise ShapeError(f"N={self.frames} frames cannot fill T={self.chunks} chunks")
        if self.frames % self.chunks != 0:
            raise ShapeError(f"N={self.frames} is not divisible by T={self.chunks}")
        if self.family == "order" and self.chunks < 2:
            raise ConfigError("the order family needs at least 2 chunks")
        if self.square >= min(self.height, self.width):
            raise ConfigError(f"square of {self.square}px does not fit a {self.height}x{self.width} frame")
        if self.audio_rate % self.fps != 0:
            raise ConfigError(f"audio rate {self.audio_rate} is not a whole number of samples per frame")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class SynthGenerator:
    """Renders events into frames and waveforms from seeded generators."""

    EVENT_VALUE = 1.0

    @classmethod
    def _streams(cls, seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
        # video and audio draw from independent streams so that audio
        # decisions never change the frames of a given seed
        video_ss, audio_ss = np.random.SeedSequence(int(seed)).spawn(2)
        return np.random.default_rng(video_ss), np.random.default_rng(audio_ss)

    @classmethod
    def draw_event(cls, frames: np.ndarray, chunk: int, config: SynthConfig,
                   kind: str, rng: np.random.Generator) -> None:
        """Paint a square moving across every frame of 0-based `chunk`."""
        per_chunk = config.frames // config.chunks
        size = config.square
        span_y, span_x = config.height - size, config.width - size
        y, x = int(rng.integers(0, span_y + 1)), int(rng.integers(0, span_x + 1))
        vy, vx = [int(v) for v in rng.choice([-1, 1], size=2)]

        for k in range(per_chunk):
            frame = frames[chunk * per_chunk + k]
            if kind == "a":
                frame[y:y + size, x:x + size, :] = cls.EVENT_VALUE
            else:
                frame[y:y + size, x:x + size, :] = cls.EVENT_VALUE
                frame[y + 1:y + size - 1, x + 1:x + size - 1, :] = 0.0
            # bounce off the frame borders
            if not 0 <= y + vy <= span_y:
                vy = -vy
            if not 0 <= x + vx <= span_x:
                vx = -vx
            y, x = y + vy, x + vx

    @classmethod
    def add_tone(cls, audio: np.ndarray, chunk: int, config: SynthConfig) -> None:
        samples_per_chunk = (config.frames // config.chunks) * (config.audio_rate // config.fps)
        start = chunk * samples_per_chunk
        t = np.arange(samples_per_chunk) / config.audio_rate
        audio[start:start + samples_per_chunk] += config.tone_amplitude * np.sin(2 * np.pi * config.tone_hz * t)

    @classmethod
    def _tone_chunk(cls, event_chunk: int, config: SynthConfig, rng: np.random.Generator) -> Tuple[str, int]:
        mode = config.tone_mode
        if mode == "random":
            u = rng.random()
            mode = "co-occur" if u < 0.5 else ("absent" if u < 0.75 or config.chunks == 1 else "elsewhere")
        if mode == "co-occur":
            return mode, event_chunk
        if mode == "elsewhere" and config.chunks > 1:
            others = [c for c in range(config.chunks) if c != event_chunk]
            return mode, int(rng.choice(others))
        return "absent", -1

    @classmethod
    def generate(cls, config: SynthConfig, seed: int) -> MediaClip:
        config.validate()
        video_rng, audio_rng = cls._streams(seed)

        shape = (config.frames, config.height, config.width, config.channels)
        frames = video_rng.uniform(0.0, config.video_noise, size=shape)
        n_samples = config.frames * (config.audio_rate // config.fps)
        audio = audio_rng.normal(0.0, config.audio_noise, size=n_samples)

        events: Dict[str, Any] = {}
        if config.family == "which-chunk":
            chunk = int(video_rng.integers(0, config.chunks))
            cls.draw_event(frames, chunk, config, "a", video_rng)
            events["event_chunks"] = [chunk + 1]
            text = f"chunk {chunk + 1}"

        elif config.family == "order":
            chunk_a, chunk_b = (int(c) for c in video_rng.choice(config.chunks, size=2, replace=False))
            cls.draw_event(frames, chunk_a, config, "a", video_rng)
            cls.draw_event(frames, chunk_b, config, "b", video_rng)
            events["event_chunks"] = [chunk_a + 1, chunk_b + 1]
            text = "first a" if chunk_a < chunk_b else "first b"

        else:
            chunk = int(video_rng.integers(0, config.chunks))
            cls.draw_event(frames, chunk, config, "a", video_rng)
            mode, tone_chunk = cls._tone_chunk(chunk, config, audio_rng)
            if tone_chunk >= 0:
                cls.add_tone(audio, tone_chunk, config)
            events.update(event_chunks=[chunk + 1], tone_mode=mode,
                          tone_chunk=tone_chunk + 1 if tone_chunk >= 0 else None)
            text = "tone yes" if mode == "co-occur" else "tone no"

        return MediaClip(
            frames=np.clip(frames, 0.0, 1.0),
            audio=np.clip(audio, -1.0, 1.0),
            text=text,
            fps=config.fps,
            audio_rate=config.audio_rate,
            family=config.family,
            seed=int(seed),
            events=events,
        )


def synth_generate(config: SynthConfig, seed: int) -> MediaClip:
    return SynthGenerator.generate(config, seed)


def family_answers(config: SynthConfig) -> List[str]:
    """Every answer text the family can produce."""
    if config.family == "which-chunk":
        return [f"chunk {t}" for t in range(1, config.chunks + 1)]
    if config.family == "order":
        return ["first a", "first b"]
    return ["tone yes", "tone no"]
