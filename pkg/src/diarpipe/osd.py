"""Overlapped speech detection inference logic.

Neural posterior models live outside this package; they plug in as
``PosteriorProvider`` callables. This module windows the input, averages
window outputs, fuses models, thresholds the overlap class and refines the
decision with the oracle VAD.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .frontend.audio import MultiChannelAudio
from .frontend.features import MelFeatures
from .rttm import FormatError
from .timeline import SpeakerAnnotation, Timeline, mask_to_timeline, rasterize

SILENCE, SINGLE, OVERLAP = 0, 1, 2
FRAME_SHIFT = 0.01
ROW_SUM_TOL = 1e-5


@dataclass(frozen=True)
class FramePosteriors:
    """Per-frame probabilities of (silence, single speaker, overlap)."""

    probs: np.ndarray
    frame_shift: float = FRAME_SHIFT

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"posteriors must be (frames, 3), got {p.shape}")
        if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=ROW_SUM_TOL, rtol=0):
            raise ValueError("posterior rows must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]

    @property
    def overlap(self) -> np.ndarray:
        return self.probs[:, OVERLAP]


@dataclass(frozen=True)
class OsdConfig:
    window: int = 400
    stride: int = 200
    threshold: float = 0.55
    min_overlap_duration: float = 0.0

    def __post_init__(self):
        if not 0 < self.stride <= self.window:
            raise ValueError("need 0 < stride <= window")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")
        if self.min_overlap_duration < 0:
            raise ValueError("min_overlap_duration must be >= 0")


@runtime_checkable
class PosteriorProvider(Protocol):
    """Maps one input window to ``(num_frames, 3)`` posterior rows.

    ``window`` is a slice of features ``(..., frames, 64)`` or of audio
    ``(channels, samples)``; ``start_frame`` is its first frame index in the
    session. A provider that cannot be called concurrently sets
    ``serial = True``.
    """

    serial: bool

    def __call__(self, window: np.ndarray, start_frame: int, num_frames: int) -> np.ndarray: ...


def window_starts(n_frames: int, window: int, stride: int) -> list[int]:
    """Regular starts, plus a right-aligned last window when the tail is uncovered."""
    if n_frames <= window:
        return [0]
    starts = list(range(0, n_frames - window + 1, stride))
    if starts[-1] + window < n_frames:
        starts.append(n_frames - window)
    return starts


def _frame_input(source: MelFeatures | MultiChannelAudio) -> tuple[int, callable]:
    if isinstance(source, MelFeatures):
        data = source.data
        return data.shape[-2], lambda a, b: data[..., a:b, :]
    hop = int(round(source.sample_rate * FRAME_SHIFT))
    return audio_frames(source), lambda a, b: source.samples[:, a * hop : b * hop]


def aggregate_windows(provider: PosteriorProvider, source: MelFeatures | MultiChannelAudio,
                      cfg: OsdConfig = OsdConfig(), jobs: int = 1) -> FramePosteriors:
    """Run the provider on sliding windows and average overlapping outputs per frame."""
    n, cut = _frame_input(source)
    if n < 1:
        raise ValueError("input shorter than one frame")
    starts = window_starts(n, cfg.window, cfg.stride)
    length = min(cfg.window, n)

    def run(start):
        return np.asarray(provider(cut(start, start + length), start, length), dtype=np.float64)

    if jobs > 1 and not getattr(provider, "serial", True):
        with ThreadPoolExecutor(jobs) as pool:
            outputs = list(pool.map(run, starts))
    else:
        outputs = [run(s) for s in starts]

    acc = np.zeros((n, 3))
    counts = np.zeros(n)
    for idx, (start, out) in enumerate(zip(starts, outputs)):
        if out.shape != (length, 3):
            raise ValueError(f"provider output for window {idx} has shape {out.shape}, expected {(length, 3)}")
        acc[start : start + length] += out
        counts[start : start + length] += 1
    mean = acc / counts[:, None]
    return FramePosteriors(mean / mean.sum(axis=1, keepdims=True))


def fuse_posteriors(posteriors: Sequence[FramePosteriors]) -> FramePosteriors:
    """Equal-weight average of several models' posteriors."""
    if not posteriors:
        raise ValueError("nothing to fuse")
    first = posteriors[0]
    for p in posteriors[1:]:
        if p.probs.shape != first.probs.shape or not math.isclose(p.frame_shift, first.frame_shift):
            raise ValueError("posteriors to fuse differ in frame count or frame shift")
    if len(posteriors) == 1:
        return first
    return FramePosteriors(np.mean([p.probs for p in posteriors], axis=0), first.frame_shift)


def decide_overlap(post: FramePosteriors, vad: Timeline, cfg: OsdConfig = OsdConfig()) -> tuple[Timeline, Timeline]:
    """Split the VAD into overlapped and single-speaker regions.

    Frames whose overlap posterior reaches the threshold are overlapped
    speech; the result is restricted to the VAD.
    """
    raw = mask_to_timeline(post.overlap >= cfg.threshold, post.frame_shift)
    overlap = raw.intersection(vad)
    if cfg.min_overlap_duration > 0:
        overlap = Timeline(tuple(s for s in overlap if s.duration >= cfg.min_overlap_duration))
    single = vad.difference(overlap)
    return overlap, single


def overlap_ratio(overlap: Timeline, vad: Timeline) -> float:
    total = vad.duration
    return overlap.duration / total if total > 0 else 0.0


class OraclePosteriorProvider:
    """Posteriors derived from a reference annotation, for desk-scale testing.

    Each row puts ``1 - noise`` on the true class (silence / one speaker /
    two or more) and ``noise / 2`` on the others, then adds Gaussian jitter
    with standard deviation ``noise`` before clipping and renormalizing.
    Jitter is a pure function of ``(seed, frame index)``.
    """

    serial = False
    _BLOCK = 1024

    def __init__(self, reference: SpeakerAnnotation, noise_level: float = 0.0, seed: int = 0):
        if not 0 <= noise_level < 0.5:
            raise ValueError("noise_level must be in [0, 0.5)")
        self.noise = noise_level
        self.seed = seed
        self._reference = reference
        self._classes = np.zeros(0, dtype=np.int64)

    def true_classes(self, n_frames: int) -> np.ndarray:
        if len(self._classes) < n_frames:
            _, mask = rasterize(self._reference, FRAME_SHIFT, n_frames * FRAME_SHIFT)
            self._classes = np.minimum(mask.sum(axis=1), 2)
        return self._classes[:n_frames]

    def _jitter(self, start: int, stop: int) -> np.ndarray:
        blocks = range(start // self._BLOCK, (stop - 1) // self._BLOCK + 1)
        draws = np.concatenate(
            [np.random.default_rng([self.seed, b]).standard_normal((self._BLOCK, 3)) for b in blocks]
        )
        offset = start - blocks[0] * self._BLOCK
        return draws[offset : offset + stop - start]

    def posteriors(self, start: int, stop: int) -> np.ndarray:
        cls = self.true_classes(stop)[start:stop]
        rows = np.full((stop - start, 3), self.noise / 2)
        rows[np.arange(stop - start), cls] = 1.0 - self.noise
        if self.noise > 0:
            rows = np.clip(rows + self.noise * self._jitter(start, stop), 1e-6, None)
        return rows / rows.sum(axis=1, keepdims=True)

    def __call__(self, window: np.ndarray, start_frame: int, num_frames: int) -> np.ndarray:
        return self.posteriors(start_frame, start_frame + num_frames)


def oracle_posterior_provider(reference: SpeakerAnnotation, noise_level: float = 0.0, seed: int = 0) -> OraclePosteriorProvider:
    return OraclePosteriorProvider(reference, noise_level, seed)


class FilePosteriorProvider:
    """Serves precomputed posteriors read from an OSDPOST file."""

    serial = False

    def __init__(self, path: str | Path):
        self.session_id, self.posteriors = read_posteriors(path)

    def __call__(self, window: np.ndarray, start_frame: int, num_frames: int) -> np.ndarray:
        stop = start_frame + num_frames
        if stop > self.posteriors.num_frames:
            raise ValueError(f"posterior file has {self.posteriors.num_frames} frames, window needs {stop}")
        return self.posteriors.probs[start_frame:stop]


def _num(x: float) -> str:
    return np.format_float_positional(x, unique=True, trim="-")


def format_posteriors(session_id: str, post: FramePosteriors) -> bytes:
    shift_ms = _num(post.frame_shift * 1000)
    lines = [f"OSDPOST {session_id} {post.num_frames} {shift_ms}\n"]
    lines += [" ".join(_num(v) for v in row) + "\n" for row in post.probs]
    return "".join(lines).encode("utf-8")


def parse_posteriors(text: bytes | str, path: str | None = None) -> tuple[str, FramePosteriors]:
    text = text.decode("utf-8") if isinstance(text, (bytes, bytearray)) else text
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty posterior file", path, 1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "OSDPOST":
        raise FormatError("expected header 'OSDPOST <session_id> <num_frames> <frame_shift_ms>'", path, 1)
    try:
        n, shift_ms = int(head[2]), float(head[3])
    except ValueError:
        raise FormatError("bad frame count or frame shift", path, 1) from None
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 3:
            raise FormatError(f"expected 3 values, got {len(fields)}", path, lineno)
        try:
            row = [float(v) for v in fields]
        except ValueError:
            raise FormatError("non-numeric posterior", path, lineno) from None
        if min(row) < 0 or abs(sum(row) - 1.0) > ROW_SUM_TOL:
            raise FormatError(f"row does not sum to 1 (sum={sum(row)})", path, lineno)
        rows.append(row)
    if len(rows) != n:
        raise FormatError(f"header announces {n} frames, found {len(rows)}", path)
    return head[1], FramePosteriors(np.array(rows).reshape(n, 3), shift_ms / 1000)


def write_posteriors(path: str | Path, session_id: str, post: FramePosteriors) -> None:
    Path(path).write_bytes(format_posteriors(session_id, post))


def read_posteriors(path: str | Path) -> tuple[str, FramePosteriors]:
    return parse_posteriors(Path(path).read_bytes(), str(path))


def audio_frames(audio: MultiChannelAudio) -> int:
    """10 ms frames in a recording, counted the way the feature extractor does."""
    hop = int(round(audio.sample_rate * FRAME_SHIFT))
    return (audio.num_samples + hop // 2) // hop
