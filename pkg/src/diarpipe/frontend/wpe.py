"""Weighted prediction error (WPE) dereverberation, batch multi-channel form."""
from __future__ import annotations

import numpy as np

from .stft import Spectrogram

_CHUNK_BYTES = 64 * 2**20


def _stack_taps(y: np.ndarray, taps: int, delay: int) -> np.ndarray:
    """(F, C, T) -> (F, C*taps, T) of past frames delayed by ``delay + k``."""
    f, c, t = y.shape
    out = np.zeros((f, c * taps, t), dtype=y.dtype)
    for k in range(taps):
        d = delay + k
        if d >= t:
            break
        out[:, k * c : (k + 1) * c, d:] = y[:, :, : t - d]
    return out


def wpe_dereverberate(
    spec: Spectrogram,
    taps: int = 10,
    delay: int = 3,
    iterations: int = 3,
    variance_floor: float = 1e-10,
    loading: float = 1e-8,
) -> Spectrogram:
    """Suppress late reverberation by variance-weighted multi-channel linear prediction.

    Each iteration re-estimates the per-frame power of the current estimate
    (averaged over channels), solves the weighted normal equations for the
    prediction filters of every frequency bin and subtracts the prediction
    of the late tail from the observation.
    """
    if taps < 1 or delay < 1:
        raise ValueError("taps and delay must be >= 1")
    if not np.all(np.isfinite(spec.data)):
        raise ValueError("WPE input contains NaN or inf")
    if iterations <= 0:
        return spec
    y_all = np.ascontiguousarray(spec.data.transpose(2, 0, 1))  # F x C x T
    out = np.empty_like(y_all)
    # bins are independent; chunking bounds the memory of the stacked taps
    c, t = y_all.shape[1:]
    step = max(1, int(_CHUNK_BYTES // (16 * c * taps * t)))
    for lo in range(0, y_all.shape[0], step):
        out[lo : lo + step] = _wpe_bins(y_all[lo : lo + step], taps, delay, iterations, variance_floor, loading)
    return spec.with_data(out.transpose(1, 2, 0))


def _wpe_bins(y: np.ndarray, taps: int, delay: int, iterations: int, variance_floor: float,
              loading: float) -> np.ndarray:
    y_tilde = _stack_taps(y, taps, delay)
    eye = np.eye(y_tilde.shape[1])
    x = y
    for _ in range(iterations):
        power = np.maximum(np.mean(np.abs(x) ** 2, axis=1), variance_floor)  # F x T
        weighted = y_tilde / power[:, None, :]
        r = weighted @ y_tilde.conj().transpose(0, 2, 1)
        p = weighted @ y.conj().transpose(0, 2, 1)
        trace = np.real(np.trace(r, axis1=1, axis2=2))
        r = r + (loading * np.maximum(trace, 1e-30))[:, None, None] * eye
        g = np.linalg.solve(r, p)  # F x CK x C
        x = y - g.conj().transpose(0, 2, 1) @ y_tilde
    return x
