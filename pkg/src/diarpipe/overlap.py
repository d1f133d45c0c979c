"""Speaker labels for overlapped speech: heuristic and separation + verification."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .embedding import EmbeddingProvider, cosine
from .frontend.audio import MultiChannelAudio, read_wav
from .timeline import Segment, SpeakerAnnotation, Timeline

log = logging.getLogger(__name__)

MAX_SIMULTANEOUS = 2
MAX_CHUNK = 3.0


class SeparationRefused(ValueError):
    """A separator declined a segment, e.g. one that does not hold two talkers."""


@runtime_checkable
class Separator(Protocol):
    """Splits the audio of one segment into exactly two single-speaker tracks."""

    def __call__(self, audio: MultiChannelAudio, segment: Segment) -> Sequence[np.ndarray]: ...


@dataclass(frozen=True)
class OverlapDecision:
    segment: Segment
    labels: tuple[str, ...]
    scores: tuple[float, ...] = ()
    flag: str | None = None


@dataclass(frozen=True)
class OverlapAssignment:
    decisions: tuple[OverlapDecision, ...] = ()

    def __iter__(self):
        return iter(self.decisions)

    def __len__(self):
        return len(self.decisions)


def _rank_by_distance(seg: Segment, single_labeled: SpeakerAnnotation) -> list[tuple[float, float, str]]:
    best: dict[str, tuple[float, float]] = {}
    for s, label in single_labeled.entries:
        key = (round(s.gap(seg), 6), -s.duration)
        if label not in best or key < best[label]:
            best[label] = key
    return sorted((d, neg_len, label) for label, (d, neg_len) in best.items())


def _heuristic_decision(seg: Segment, single_labeled: SpeakerAnnotation) -> OverlapDecision:
    ranked = _rank_by_distance(seg, single_labeled)
    chosen = ranked[:MAX_SIMULTANEOUS]
    labels = tuple(label for _, _, label in chosen)
    scores = tuple(-d for d, _, _ in chosen)
    flag = "degenerate" if len(labels) < MAX_SIMULTANEOUS else None
    return OverlapDecision(seg, labels, scores, flag)


def assign_heuristic(overlap: Timeline, single_labeled: SpeakerAnnotation) -> OverlapAssignment:
    """Give every overlap segment the two temporally closest speakers.

    Distance is the gap between the overlap segment and a speaker's nearest
    single-speaker segment. Ties go to the speaker whose nearest segment is
    longer, then to the lexically smaller label. With only one speaker in
    the session the decision carries a single label and is flagged.
    """
    if not single_labeled.entries:
        raise ValueError("no single-speaker labels to borrow from")
    return OverlapAssignment(tuple(_heuristic_decision(seg, single_labeled) for seg in overlap))


def split_long(overlap: Timeline, max_len: float = MAX_CHUNK) -> list[Segment]:
    """Cut segments longer than ``max_len`` into equal chunks no longer than it."""
    out = []
    for seg in overlap:
        pieces = max(1, math.ceil(seg.duration / max_len - 1e-9))
        bounds = [seg.onset + seg.duration * i / pieces for i in range(pieces)] + [seg.end]
        out.extend(Segment.span(a, b) for a, b in zip(bounds[:-1], bounds[1:]))
    return out


def _verify(sims: list[dict[str, float]]) -> tuple[tuple[str, str], tuple[float, float]]:
    ranked = [sorted(s.items(), key=lambda kv: (-kv[1], kv[0])) for s in sims]
    first = [r[0] for r in ranked]
    if first[0][0] != first[1][0]:
        return (first[0][0], first[1][0]), (first[0][1], first[1][1])
    # on equal similarity the second track yields
    weaker = 0 if first[0][1] < first[1][1] else 1
    picks = list(first)
    picks[weaker] = ranked[weaker][1]
    return (picks[0][0], picks[1][0]), (picks[0][1], picks[1][1])


def assign_by_separation(
    overlap: Timeline,
    audio: MultiChannelAudio,
    separator: Separator,
    provider: EmbeddingProvider,
    cents: Mapping[str, np.ndarray],
    single_labeled: SpeakerAnnotation | None = None,
    max_chunk: float = MAX_CHUNK,
) -> OverlapAssignment:
    """Separate each overlap chunk into two tracks and verify each against the centroids.

    Each track takes its most similar centroid; if both pick the same one,
    the track with the lower similarity falls back to its second choice.
    A silent separated track, or a separator that declines the chunk, makes
    that chunk fall back to the heuristic.
    """
    if len(cents) < MAX_SIMULTANEOUS:
        raise ValueError("separation-based assignment needs at least two centroids")
    decisions = []
    for seg in split_long(overlap, max_chunk):
        try:
            tracks = list(separator(audio, seg))
        except SeparationRefused as exc:
            if single_labeled is None:
                raise
            log.info("separator declined [%.3f, %.3f): %s", seg.onset, seg.end, exc)
            tracks = None
        if tracks is None or any(not np.any(np.abs(np.asarray(t)) > 1e-12) for t in tracks):
            if single_labeled is None:
                raise ValueError("silent separated track and no single-speaker labels to fall back on")
            d = _heuristic_decision(seg, single_labeled)
            decisions.append(OverlapDecision(seg, d.labels, d.scores, "fallback"))
            continue
        if len(tracks) != 2:
            raise ValueError(f"separator returned {len(tracks)} tracks for [{seg.onset:.3f}, {seg.end:.3f})")
        sims = []
        for track in tracks:
            excerpt = MultiChannelAudio(np.asarray(track, dtype=np.float64), audio.sample_rate, seg.onset)
            vec = provider(excerpt, seg)
            sims.append({label: cosine(vec, c) for label, c in cents.items()})
        labels, scores = _verify(sims)
        decisions.append(OverlapDecision(seg, labels, scores))
    return OverlapAssignment(tuple(decisions))


def merge_results(single_labeled: SpeakerAnnotation, assignment: OverlapAssignment,
                  overlap: Timeline | None = None) -> SpeakerAnnotation:
    """Single-speaker labels plus every assigned speaker over its overlap segment."""
    entries = list(single_labeled.entries)
    for d in assignment:
        entries.extend((d.segment, label) for label in d.labels)
    return SpeakerAnnotation(single_labeled.session_id, tuple(entries))


class FileSeparator:
    """Reads pre-separated pairs laid out as ``<root>/<session>/<onset_ms>_<dur_ms>_ch{0,1}.wav``."""

    def __init__(self, root: str | Path, session_id: str):
        self.root = Path(root) / session_id

    def path(self, segment: Segment, channel: int) -> Path:
        onset_ms = int(round(segment.onset * 1000))
        dur_ms = int(round(segment.duration * 1000))
        return self.root / f"{onset_ms}_{dur_ms}_ch{channel}.wav"

    def __call__(self, audio: MultiChannelAudio, segment: Segment) -> list[np.ndarray]:
        tracks = []
        for ch in (0, 1):
            p = self.path(segment, ch)
            if not p.exists():
                raise FileNotFoundError(f"missing separated track {p}")
            tracks.append(read_wav(p).samples[0])
        return tracks
