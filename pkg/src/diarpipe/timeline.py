"""Segment and timeline algebra.

Times are float seconds. Two instants closer than ``EPS`` are treated as
equal; pieces shorter than ``EPS`` vanish on normalization.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

EPS = 1e-6


@functools.total_ordering
class Segment:
    """Half-open interval ``[onset, onset + duration)`` in seconds.

    The end point is stored as given (``Segment.span``) so that boundaries
    survive exact round trips; ``duration`` is derived from it.
    """

    __slots__ = ("onset", "end")

    def __init__(self, onset: float, duration: float | None = None, *, end: float | None = None):
        onset = float(onset)
        if end is None:
            if duration is None:
                raise TypeError("Segment needs a duration or an end")
            end = onset + float(duration)
        end = float(end)
        if not (math.isfinite(onset) and math.isfinite(end)):
            raise ValueError(f"non-finite segment ({onset}, {end})")
        if onset < 0:
            raise ValueError(f"negative onset {onset}")
        if end <= onset:
            raise ValueError(f"non-positive duration for segment [{onset}, {end})")
        object.__setattr__(self, "onset", onset)
        object.__setattr__(self, "end", end)

    def __setattr__(self, name, value):
        raise AttributeError("Segment is immutable")

    @classmethod
    def span(cls, start: float, end: float) -> "Segment":
        return cls(start, end=end)

    @property
    def duration(self) -> float:
        return self.end - self.onset

    def _key(self):
        return (self.onset, self.end)

    def __eq__(self, other):
        return isinstance(other, Segment) and self._key() == other._key()

    def __lt__(self, other):
        return self._key() < other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return f"Segment(onset={self.onset!r}, end={self.end!r})"

    def __reduce__(self):
        return (Segment.span, self._key())

    def gap(self, other: "Segment") -> float:
        """Distance between two segments, 0 if they touch or overlap."""
        return max(0.0, other.onset - self.end, self.onset - other.end)

    def overlap(self, other: "Segment") -> float:
        return max(0.0, min(self.end, other.end) - max(self.onset, other.onset))


def _merge(spans: Iterable[tuple[float, float]]) -> tuple[Segment, ...]:
    out: list[list[float]] = []
    for start, end in sorted(spans):
        if end - start < EPS:
            continue
        if out and start <= out[-1][1] + EPS:
            if end > out[-1][1]:
                out[-1][1] = end
        else:
            out.append([start, end])
    return tuple(Segment.span(s, e) for s, e in out if e - s >= EPS)


@dataclass(frozen=True)
class Timeline:
    """Ordered, normalized set of segments (no overlapping or abutting pieces)."""

    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", _merge((s.onset, s.end) for s in self.segments))

    @classmethod
    def from_spans(cls, spans: Iterable[tuple[float, float]]) -> "Timeline":
        return cls(_merge(spans))

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __bool__(self) -> bool:
        return bool(self.segments)

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def extent(self) -> float:
        return self.segments[-1].end if self.segments else 0.0

    def spans(self) -> list[tuple[float, float]]:
        return [(s.onset, s.end) for s in self.segments]

    def union(self, other: "Timeline") -> "Timeline":
        return Timeline.from_spans(self.spans() + other.spans())

    def intersection(self, other: "Timeline") -> "Timeline":
        a, b = self.spans(), other.spans()
        out = []
        i = j = 0
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if hi - lo >= EPS:
                out.append((lo, hi))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return Timeline.from_spans(out)

    def difference(self, other: "Timeline") -> "Timeline":
        b = other.spans()
        out = []
        j = 0
        for start, end in self.spans():
            while j < len(b) and b[j][1] <= start:
                j += 1
            cur = start
            k = j
            while k < len(b) and b[k][0] < end:
                if b[k][0] > cur:
                    out.append((cur, b[k][0]))
                cur = max(cur, b[k][1])
                k += 1
            if cur < end:
                out.append((cur, end))
        return Timeline.from_spans(out)

    def quantized(self, ndigits: int = 3) -> "Timeline":
        """Round onsets and durations the way a text RTTM round trip would."""
        segs = []
        for s in self.segments:
            onset, duration = round(s.onset, ndigits), round(s.duration, ndigits)
            if duration > 0:
                segs.append(Segment(onset, duration))
        return Timeline(tuple(segs))

    def crop(self, start: float, end: float) -> "Timeline":
        if end - start < EPS:
            return Timeline()
        return self.intersection(Timeline.from_spans([(start, end)]))


def timeline_ops(a: Timeline, b: Timeline, kind: str) -> Timeline:
    if kind == "union":
        return a.union(b)
    if kind == "intersection":
        return a.intersection(b)
    if kind == "difference":
        return a.difference(b)
    raise ValueError(f"unknown timeline operation {kind!r}")


@dataclass(frozen=True)
class SpeakerAnnotation:
    """Speaker-labelled segments of one session.

    Segments of one speaker are merged on construction; different speakers
    may overlap.
    """

    session_id: str
    entries: tuple[tuple[Segment, str], ...] = field(default=())

    def __post_init__(self):
        by_label: dict[str, list[tuple[float, float]]] = {}
        for seg, label in self.entries:
            if not label:
                raise ValueError("empty speaker label")
            by_label.setdefault(label, []).append((seg.onset, seg.end))
        merged = [(seg, label) for label, spans in by_label.items() for seg in _merge(spans)]
        merged.sort(key=lambda e: (e[0].onset, e[1], e[0].end))
        object.__setattr__(self, "entries", tuple(merged))

    @classmethod
    def from_timelines(cls, session_id: str, tracks: dict[str, Timeline]) -> "SpeakerAnnotation":
        return cls(session_id, tuple((s, lab) for lab, tl in tracks.items() for s in tl))

    @property
    def labels(self) -> list[str]:
        return sorted({label for _, label in self.entries})

    def track(self, label: str) -> Timeline:
        return Timeline(tuple(seg for seg, lab in self.entries if lab == label))

    def tracks(self) -> dict[str, Timeline]:
        return {label: self.track(label) for label in self.labels}

    def support(self) -> Timeline:
        return Timeline(tuple(seg for seg, _ in self.entries))

    @property
    def extent(self) -> float:
        return max((seg.end for seg, _ in self.entries), default=0.0)

    @property
    def speech_time(self) -> float:
        return float(sum(seg.duration for seg, _ in self.entries))

    def relabel(self, mapping: dict[str, str]) -> "SpeakerAnnotation":
        return SpeakerAnnotation(
            self.session_id, tuple((seg, mapping.get(lab, lab)) for seg, lab in self.entries)
        )

    def quantized(self, ndigits: int = 3) -> "SpeakerAnnotation":
        return SpeakerAnnotation.from_timelines(
            self.session_id, {lab: tl.quantized(ndigits) for lab, tl in self.tracks().items()}
        )

    def overlap_timeline(self) -> Timeline:
        """Regions where two or more speakers are active."""
        tracks = list(self.tracks().values())
        out = Timeline()
        for i in range(len(tracks)):
            for j in range(i + 1, len(tracks)):
                out = out.union(tracks[i].intersection(tracks[j]))
        return out


DiarizationHypothesis = SpeakerAnnotation


def frame_count(horizon: float, shift: float) -> int:
    return max(0, int(math.ceil(horizon / shift - 1e-9)))


def coverage(timeline: Timeline | Sequence[Segment], shift: float, n_frames: int) -> np.ndarray:
    """Seconds of each frame [i*shift, (i+1)*shift) covered by the (disjoint) segments."""
    segs = list(timeline)
    if not segs or n_frames <= 0:
        return np.zeros(max(n_frames, 0))
    on = np.array([s.onset for s in segs])
    end = np.array([s.end for s in segs])
    first = np.floor(on / shift).astype(np.int64)
    last = np.floor(end / shift).astype(np.int64)
    # full frames strictly between the first and last frame, via a difference array
    diff = np.zeros(n_frames + 1)
    lo = np.clip(first + 1, 0, n_frames)
    hi = np.clip(last, 0, n_frames)
    ok = hi > lo
    np.add.at(diff, lo[ok], shift)
    np.add.at(diff, hi[ok], -shift)
    cov = np.cumsum(diff[:-1])
    same = first == last
    head = np.where(same, end, (first + 1) * shift) - on
    tail = np.where(same, 0.0, end - last * shift)
    keep = (first >= 0) & (first < n_frames)
    np.add.at(cov, first[keep], np.clip(head[keep], 0.0, None))
    keep = ~same & (last >= 0) & (last < n_frames)
    np.add.at(cov, last[keep], np.clip(tail[keep], 0.0, None))
    return cov


def timeline_mask(timeline: Timeline, shift: float, n_frames: int) -> np.ndarray:
    """Frame activity: covered by more than half a frame."""
    return coverage(timeline, shift, n_frames) > shift / 2 + 1e-9


def rasterize(ann: SpeakerAnnotation, frame_shift: float, horizon: float) -> tuple[list[str], np.ndarray]:
    """Per-frame speaker activity.

    Returns the sorted speaker labels and a boolean matrix of shape
    ``(n_frames, n_speakers)``.
    """
    if frame_shift <= 0:
        raise ValueError("frame_shift must be positive")
    labels = ann.labels
    n = frame_count(horizon, frame_shift)
    mask = np.zeros((n, len(labels)), dtype=bool)
    for k, label in enumerate(labels):
        mask[:, k] = timeline_mask(ann.track(label), frame_shift, n)
    return labels, mask


def frame_sets(ann: SpeakerAnnotation, frame_shift: float, horizon: float) -> list[frozenset[str]]:
    labels, mask = rasterize(ann, frame_shift, horizon)
    return [frozenset(labels[k] for k in np.flatnonzero(row)) for row in mask]


def mask_to_timeline(mask: np.ndarray, frame_shift: float) -> Timeline:
    """Runs of active frames as segments; boundaries rounded to the microsecond."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return Timeline()
    padded = np.concatenate([[False], mask, [False]])
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return Timeline.from_spans(
        (round(s * frame_shift, 6), round(e * frame_shift, 6)) for s, e in zip(starts, ends)
    )


def unrasterize(labels: Sequence[str], mask: np.ndarray, frame_shift: float, session_id: str) -> SpeakerAnnotation:
    return SpeakerAnnotation.from_timelines(
        session_id, {lab: mask_to_timeline(mask[:, k], frame_shift) for k, lab in enumerate(labels)}
    )
