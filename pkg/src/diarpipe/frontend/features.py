"""Log Mel-filterbank features, mean normalization and frequency masking."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import MultiChannelAudio

SAMPLE_RATE = 16000
FRAME_LENGTH = 400  # 25 ms
FRAME_SHIFT = 160  # 10 ms
FFT_SIZE = 512
NUM_MELS = 64
LOG_FLOOR = 1e-10

MELF_MAGIC = b"MELF"


@dataclass(frozen=True)
class MelFeatures:
    """Feature matrix ``(frames, 64)``, or ``(channels, frames, 64)`` for stacked channels."""

    data: np.ndarray
    frame_shift: float = 0.010
    frame_length: float = 0.025

    @property
    def num_frames(self) -> int:
        return self.data.shape[-2]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = NUM_MELS, fft_size: int = FFT_SIZE, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape ``(n_mels, fft_size//2 + 1)``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def centered_frames(x: np.ndarray, frame_length: int = FRAME_LENGTH, frame_shift: int = FRAME_SHIFT) -> np.ndarray:
    """Frames centred on ``(i + 1/2) * shift``; ``round(N / shift)`` of them.

    Frame ``i`` then describes the interval ``[i*shift, (i+1)*shift)``, which
    keeps feature frames aligned with 10 ms posterior frames. Edges are
    reflection-padded.
    """
    n = x.shape[-1]
    count = (n + frame_shift // 2) // frame_shift
    left = frame_length // 2 - frame_shift // 2
    right = max(0, (count - 1) * frame_shift - left + frame_length - n)
    pad = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    mode = "reflect" if n > max(left, right) else "constant"
    padded = np.pad(x, pad, mode=mode)
    windows = np.lib.stride_tricks.sliding_window_view(padded, frame_length, axis=-1)
    return windows[..., : count * frame_shift : frame_shift, :][..., :count, :]


def logmel(audio: MultiChannelAudio, apply_cmn: bool = True) -> MelFeatures:
    """64-dim log Mel energies (25 ms Hamming frames, 10 ms shift, 512-point FFT).

    Multi-channel input gives one feature matrix per channel.
    """
    if audio.sample_rate != SAMPLE_RATE:
        raise ValueError(f"logmel expects {SAMPLE_RATE} Hz audio, got {audio.sample_rate} Hz")
    frames = centered_frames(audio.samples) * np.hamming(FRAME_LENGTH)
    power = np.abs(np.fft.rfft(frames, n=FFT_SIZE, axis=-1)) ** 2
    feats = np.log(np.maximum(power @ mel_filterbank().T, LOG_FLOOR))
    if apply_cmn:
        feats = cmn(feats)
    return MelFeatures(feats[0] if audio.num_channels == 1 else feats)


def cmn(feats: np.ndarray) -> np.ndarray:
    """Subtract the per-coefficient mean over the utterance."""
    return feats - feats.mean(axis=-2, keepdims=True)


def mask_band(features: MelFeatures, start: int, width: int) -> MelFeatures:
    data = np.array(features.data, copy=True)
    data[..., start : start + width] = 0.0
    return MelFeatures(data, features.frame_shift, features.frame_length)


def freq_mask(features: MelFeatures, max_bins: int = 10, seed: int | None = None) -> tuple[MelFeatures, int, int]:
    """Zero one random band of ``U{0..max_bins}`` consecutive Mel bins in every frame.

    Returns the masked features with the band's start and width.
    """
    dims = features.data.shape[-1]
    if not 0 <= max_bins <= dims:
        raise ValueError(f"max_bins must be in [0, {dims}]")
    rng = np.random.default_rng(seed)
    width = int(rng.integers(0, max_bins + 1))
    start = int(rng.integers(0, dims - width + 1))
    if width == 0:
        return features, start, 0
    return mask_band(features, start, width), start, width


def write_melf(path: str | Path, features: MelFeatures) -> None:
    data = np.asarray(features.data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("MELF stores a single (frames, dims) matrix")
    with open(path, "wb") as fh:
        fh.write(MELF_MAGIC + struct.pack("<II", *data.shape) + data.tobytes(order="C"))


def read_melf(path: str | Path) -> MelFeatures:
    raw = Path(path).read_bytes()
    if raw[:4] != MELF_MAGIC:
        raise ValueError(f"{path}: not a MELF file")
    frames, dims = struct.unpack("<II", raw[4:12])
    body = raw[12:]
    if len(body) != 4 * frames * dims:
        raise ValueError(f"{path}: expected {frames}x{dims} floats, found {len(body) // 4}")
    return MelFeatures(np.frombuffer(body, dtype="<f4").reshape(frames, dims).astype(np.float64))
