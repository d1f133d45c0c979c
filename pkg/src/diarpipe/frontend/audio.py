"""Multi-channel audio container and WAV input/output."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


@dataclass(frozen=True)
class MultiChannelAudio:
    """Signal matrix of shape ``(channels, samples)``.

    ``offset`` is the session time (seconds) of the first sample; excerpts
    cut out of a session carry a non-zero offset.
    """

    samples: np.ndarray
    sample_rate: int
    offset: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"expected (channels, samples) audio, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("audio contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", x)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def channel(self, index: int) -> "MultiChannelAudio":
        return MultiChannelAudio(self.samples[index : index + 1], self.sample_rate, self.offset)

    def excerpt(self, onset: float, end: float) -> "MultiChannelAudio":
        """Samples between two session times (seconds)."""
        a = max(0, int(round((onset - self.offset) * self.sample_rate)))
        b = min(self.num_samples, int(round((end - self.offset) * self.sample_rate)))
        return MultiChannelAudio(self.samples[:, a:max(a, b)], self.sample_rate, self.offset + a / self.sample_rate)


def read_wav(path: str | Path) -> MultiChannelAudio:
    """Read 16-bit PCM or 32-bit float WAV into [-1, 1] floats."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample type {data.dtype}")
    x = x[:, None] if x.ndim == 1 else x
    return MultiChannelAudio(x.T, int(rate))


def pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype(np.int16)


def quantize_pcm16(audio: MultiChannelAudio) -> MultiChannelAudio:
    """The signal a 16-bit WAV round trip would give back."""
    return MultiChannelAudio(pcm16(audio.samples).astype(np.float64) / 32768.0, audio.sample_rate, audio.offset)


def write_wav(path: str | Path, audio: MultiChannelAudio) -> None:
    data = pcm16(audio.samples).T
    wavfile.write(str(path), audio.sample_rate, data[:, 0] if audio.num_channels == 1 else data)
