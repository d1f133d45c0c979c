"""Short-time Fourier transform with weighted overlap-add inverse."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import MultiChannelAudio


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT of shape ``(channels, frames, bins)``."""

    data: np.ndarray
    frame_length: int
    frame_shift: int
    fft_size: int
    sample_rate: int = 16000
    num_samples: int | None = None

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != self.fft_size // 2 + 1:
            raise ValueError(f"spectrogram shape {self.data.shape} inconsistent with fft_size {self.fft_size}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    def power(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        return Spectrogram(data, self.frame_length, self.frame_shift, self.fft_size, self.sample_rate, self.num_samples)


def num_frames(n_samples: int, frame_length: int, frame_shift: int) -> int:
    """Frames that fit entirely; the trailing partial frame is dropped."""
    return 1 + (n_samples - frame_length) // frame_shift


def frame_signal(x: np.ndarray, frame_length: int, frame_shift: int) -> np.ndarray:
    """View ``(..., samples)`` as ``(..., frames, frame_length)``."""
    n = num_frames(x.shape[-1], frame_length, frame_shift)
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_length, axis=-1)
    return windows[..., : (n - 1) * frame_shift + 1 : frame_shift, :]


def stft(audio: MultiChannelAudio, frame_length: int = 512, frame_shift: int = 128, fft_size: int = 512) -> Spectrogram:
    if frame_length > fft_size:
        raise ValueError("frame_length must not exceed fft_size")
    if not 0 < frame_shift <= frame_length:
        raise ValueError("frame_shift must be in (0, frame_length]")
    if audio.num_samples < frame_length:
        raise ValueError(f"audio ({audio.num_samples} samples) shorter than one frame ({frame_length})")
    frames = frame_signal(audio.samples, frame_length, frame_shift) * np.hamming(frame_length)
    spec = np.fft.rfft(frames, n=fft_size, axis=-1)
    return Spectrogram(spec, frame_length, frame_shift, fft_size, audio.sample_rate, audio.num_samples)


def istft(spec: Spectrogram, num_samples: int | None = None) -> MultiChannelAudio:
    """Weighted overlap-add inverse; samples no frame covers come back as zeros."""
    n = num_samples or spec.num_samples or (spec.num_frames - 1) * spec.frame_shift + spec.frame_length
    win = np.hamming(spec.frame_length)
    frames = np.fft.irfft(spec.data, n=spec.fft_size, axis=-1)[..., : spec.frame_length] * win
    out = np.zeros((spec.data.shape[0], n))
    norm = np.zeros(n)
    for t in range(spec.num_frames):
        a = t * spec.frame_shift
        b = min(n, a + spec.frame_length)
        out[:, a:b] += frames[:, t, : b - a]
        norm[a:b] += win[: b - a] ** 2
    covered = norm > 1e-8
    out[:, covered] /= norm[covered]
    return MultiChannelAudio(out, spec.sample_rate)
