"""
Log-mel spectrogram with one time band per video frame.

Each band is the Hann-windowed magnitude spectrum of exactly one frame
period of audio, so band boundaries coincide with frame boundaries.
"""
from functools import lru_cache

import numpy as np

from core.errors import ShapeError

LOG_FLOOR = 1e-6


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(n_mel: int, sample_rate: int) -> np.ndarray:
    """Center frequency (Hz) of each triangular band, 0 .. Nyquist split evenly in mel."""
    points = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mel + 2)
    return mel_to_hz(points[1:-1])


@lru_cache(maxsize=32)
def mel_filterbank(n_mel: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """(n_mel, n_fft // 2 + 1) triangles with unit peak at each band center."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mel + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    bank = np.zeros((n_mel, freqs.shape[0]))
    for b in range(n_mel):
        lo, center, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    bank.setflags(write=False)
    return bank


def make_spectrogram(
    audio: np.ndarray,
    fps: int,
    n_mel: int,
    sample_rate: int,
    num_frames: int,
) -> np.ndarray:
    """
    Args:
        audio: (M,) waveform in [-1, 1]
        fps: video frames per second
        n_mel: number of mel bands
        sample_rate: audio samples per second
        num_frames: N, the number of video frames the audio must cover

    Returns:
        (N, n_mel) log-mel values; silence maps to log(LOG_FLOOR) everywhere
    """
    if sample_rate % fps != 0:
        raise ShapeError(f"audio rate {sample_rate} is not a whole number of samples per frame at {fps} fps")
    samples_per_frame = sample_rate // fps
    needed = num_frames * samples_per_frame
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.shape[0] < needed:
        raise ShapeError(f"audio has {audio.shape[0] if audio.ndim == 1 else audio.shape} samples, "
                         f"{num_frames} frames need {needed}")

    frames = audio[:needed].reshape(num_frames, samples_per_frame)
    window = np.hanning(samples_per_frame)
    magnitude = np.abs(np.fft.rfft(frames * window, axis=-1))
    bank = mel_filterbank(n_mel, samples_per_frame, sample_rate)
    return np.log(magnitude @ bank.T + LOG_FLOOR)
