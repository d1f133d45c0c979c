"""GCC-PHAT delay estimation and delay-and-sum beamforming."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .audio import MultiChannelAudio

log = logging.getLogger(__name__)


def gcc_phat(sig: np.ndarray, ref: np.ndarray, max_delay: int | None = None,
             ref_spectrum: np.ndarray | None = None) -> int:
    """Integer lag (in samples) by which ``sig`` trails ``ref``.

    ``ref_spectrum`` (from ``_spectrum(ref, len(sig))``) skips recomputing the
    reference transform when one reference is matched against many channels.
    """
    nfft = _nfft(len(sig), len(ref))
    if ref_spectrum is None:
        ref_spectrum = np.fft.rfft(ref, nfft)
    cross = np.fft.rfft(sig, nfft) * np.conj(ref_spectrum)
    cross /= np.maximum(np.abs(cross), 1e-12)
    cc = np.fft.irfft(cross, nfft)
    m = nfft // 2 if max_delay is None else min(nfft // 2, max_delay)
    lags = np.concatenate([cc[-m:], cc[: m + 1]])
    return int(np.argmax(lags)) - m


def _nfft(n_sig: int, n_ref: int) -> int:
    return 1 << (n_sig + n_ref - 1).bit_length()


def _spectrum(ref: np.ndarray, n_sig: int) -> np.ndarray:
    return np.fft.rfft(ref, _nfft(n_sig, len(ref)))


def shift_signal(x: np.ndarray, lag: int) -> np.ndarray:
    """Advance ``x`` by ``lag`` samples (delay it if negative), zero-padding the edge."""
    out = np.zeros_like(x)
    if lag > 0:
        out[:-lag] = x[lag:]
    elif lag < 0:
        out[-lag:] = x[:lag]
    else:
        out[:] = x
    return out


@dataclass(frozen=True)
class BeamformResult:
    audio: MultiChannelAudio
    delays: tuple[int, ...]
    warning: str | None = None


def das_beamform(audio: MultiChannelAudio, reference_channel: int = 0, max_delay: int | None = 800) -> BeamformResult:
    """Align every channel to the reference with one session-wide GCC-PHAT lag and average."""
    if audio.num_channels < 2:
        log.warning("delay-and-sum needs at least two channels; returning input unchanged")
        return BeamformResult(audio, (0,), warning="single-channel input")
    ref = audio.samples[reference_channel]
    ref_spec = _spectrum(ref, audio.num_samples)
    delays = []
    acc = np.zeros(audio.num_samples)
    for ch in range(audio.num_channels):
        x = audio.samples[ch]
        lag = 0 if ch == reference_channel else gcc_phat(x, ref, max_delay, ref_spec)
        delays.append(lag)
        acc += shift_signal(x, lag)
    out = MultiChannelAudio(acc / audio.num_channels, audio.sample_rate, audio.offset)
    return BeamformResult(out, tuple(delays))
