"""Sub-segmentation, speaker-embedding providers, cosine scoring and centroids."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .frontend.audio import MultiChannelAudio
from .rttm import FormatError
from .timeline import EPS, Segment, Timeline

NORM_EPS = 1e-6
ALIGN_TOL = 1e-3


@dataclass(frozen=True)
class SubSegmentPlan:
    window: float = 1.5
    shift: float = 0.25

    def __post_init__(self):
        if not 0 < self.shift <= self.window:
            raise ValueError("need 0 < shift <= window")


@dataclass(frozen=True)
class EmbeddingSet:
    """Unit-norm embeddings, one row per segment."""

    vectors: np.ndarray
    segments: tuple[Segment, ...]

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            v = v.reshape(len(self.segments), -1)
        if v.shape[0] != len(self.segments):
            raise ValueError(f"{v.shape[0]} vectors for {len(self.segments)} segments")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "segments", tuple(self.segments))

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@runtime_checkable
class EmbeddingProvider(Protocol):
    """Maps (audio, segment) to a fixed-size speaker vector.

    ``audio`` is either the whole session (offset 0) or an excerpt such as
    a separated track, whose ``offset`` tells where it sits in the session.
    """

    serial: bool

    def __call__(self, audio: MultiChannelAudio, segment: Segment) -> np.ndarray: ...


def plan_subsegments(single_speaker: Timeline, plan: SubSegmentPlan = SubSegmentPlan()) -> list[Segment]:
    """Cut each segment into fixed windows at a fixed shift.

    Segments no longer than the window are kept whole; otherwise a final
    window is right-aligned to the segment end when the regular grid stops
    short of it.
    """
    out = []
    for seg in single_speaker:
        if seg.duration <= plan.window + EPS:
            out.append(seg)
            continue
        count = int(math.floor((seg.duration - plan.window) / plan.shift + 1e-9)) + 1
        for k in range(count):
            out.append(Segment(seg.onset + k * plan.shift, plan.window))
        last_end = seg.onset + (count - 1) * plan.shift + plan.window
        if seg.end - last_end > EPS:
            out.append(Segment(seg.end - plan.window, plan.window))
    return out


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm < NORM_EPS):
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def extract_embeddings(provider: EmbeddingProvider, audio: MultiChannelAudio, segments: Sequence[Segment],
                       jobs: int = 1) -> EmbeddingSet:
    segments = list(segments)
    if not segments:
        return EmbeddingSet(np.zeros((0, 0)), ())
    call = lambda seg: np.asarray(provider(audio, seg), dtype=np.float64).ravel()
    if jobs > 1 and not getattr(provider, "serial", True):
        with ThreadPoolExecutor(jobs) as pool:
            rows = list(pool.map(call, segments))
    else:
        rows = [call(s) for s in segments]
    dims = {r.size for r in rows}
    if len(dims) != 1:
        raise ValueError(f"embedding provider returned inconsistent dimensions {sorted(dims)}")
    return EmbeddingSet(l2_normalize(np.stack(rows)), tuple(segments))


def cosine(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def centroids(emb: EmbeddingSet, labels: Sequence) -> dict:
    """Normalized mean embedding per cluster id."""
    labels = list(labels)
    if len(labels) != len(emb):
        raise ValueError(f"{len(labels)} labels for {len(emb)} embeddings")
    out = {}
    for lab in sorted(set(labels), key=str):
        rows = emb.vectors[[i for i, x in enumerate(labels) if x == lab]]
        mean = rows.mean(axis=0)
        if np.linalg.norm(mean) < NORM_EPS:
            raise ValueError(f"degenerate centroid for cluster {lab!r}")
        out[lab] = mean / np.linalg.norm(mean)
    return out


def _num(x: float) -> str:
    return np.format_float_positional(x, unique=True, trim="-")


class FileEmbeddingProvider:
    """Looks up precomputed embeddings by segment boundaries (tolerance 1 ms)."""

    serial = False

    def __init__(self, path: str | Path):
        self.session_id, self.embeddings = read_embeddings(path)
        self._starts = np.array([s.onset for s in self.embeddings.segments])
        self._ends = np.array([s.end for s in self.embeddings.segments])

    def __call__(self, audio: MultiChannelAudio, segment: Segment) -> np.ndarray:
        hit = np.flatnonzero(
            (np.abs(self._starts - segment.onset) <= ALIGN_TOL) & (np.abs(self._ends - segment.end) <= ALIGN_TOL)
        )
        if hit.size == 0:
            raise KeyError(f"no embedding for segment [{segment.onset:.3f}, {segment.end:.3f})")
        return self.embeddings.vectors[hit[0]]


def format_embeddings(session_id: str, emb: EmbeddingSet) -> bytes:
    d = emb.dim if len(emb) else 0
    lines = [f"EMBED {session_id} {len(emb)} {d}\n"]
    for seg, row in zip(emb.segments, emb.vectors):
        lines.append(" ".join([_num(seg.onset), _num(seg.end)] + [_num(v) for v in row]) + "\n")
    return "".join(lines).encode("utf-8")


def parse_embeddings(text: bytes | str, path: str | None = None,
                     segments: Sequence[Segment] | None = None) -> tuple[str, EmbeddingSet]:
    """Parse an EMBED file; rows are L2-normalized on load.

    With ``segments`` given, row boundaries must match them within 1 ms.
    """
    text = text.decode("utf-8") if isinstance(text, (bytes, bytearray)) else text
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise FormatError("empty embedding file", path, 1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "EMBED":
        raise FormatError("expected header 'EMBED <session_id> <n> <d>'", path, 1)
    try:
        n, d = int(head[2]), int(head[3])
    except ValueError:
        raise FormatError("bad embedding count or dimension", path, 1) from None
    segs, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != d + 2:
            raise FormatError(f"expected {d + 2} fields, got {len(fields)}", path, lineno)
        try:
            values = [float(v) for v in fields]
            segs.append(Segment.span(values[0], values[1]))
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None
        rows.append(values[2:])
    if len(rows) != n:
        raise FormatError(f"header announces {n} embeddings, found {len(rows)}", path)
    if segments is not None:
        segments = list(segments)
        if len(segments) != n:
            raise FormatError(f"{n} embeddings but {len(segments)} expected segments", path)
        for i, (a, b) in enumerate(zip(segs, segments)):
            if abs(a.onset - b.onset) > ALIGN_TOL or abs(a.end - b.end) > ALIGN_TOL:
                raise FormatError(f"embedding {i} is not aligned with segment [{b.onset}, {b.end})", path, i + 2)
    vectors = np.array(rows, dtype=np.float64).reshape(n, d)
    if n:
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms < NORM_EPS):
            raise FormatError("zero embedding vector", path)
        # rows that are already unit length are kept bit-for-bit
        off = np.abs(norms - 1.0) > 1e-12
        vectors[off] = vectors[off] / norms[off, None]
    return head[1], EmbeddingSet(vectors, tuple(segs))


def write_embeddings(path: str | Path, session_id: str, emb: EmbeddingSet) -> None:
    Path(path).write_bytes(format_embeddings(session_id, emb))


def read_embeddings(path: str | Path, segments: Sequence[Segment] | None = None) -> tuple[str, EmbeddingSet]:
    return parse_embeddings(Path(path).read_bytes(), str(path), segments)


def format_centroids(session_id: str, cents: Mapping[str, np.ndarray]) -> bytes:
    d = len(next(iter(cents.values()))) if cents else 0
    lines = [f"CENTROIDS {session_id} {len(cents)} {d}\n"]
    for label in sorted(cents):
        lines.append(" ".join([label] + [_num(v) for v in cents[label]]) + "\n")
    return "".join(lines).encode("utf-8")


def parse_centroids(text: bytes | str, path: str | None = None) -> tuple[str, dict[str, np.ndarray]]:
    text = text.decode("utf-8") if isinstance(text, (bytes, bytearray)) else text
    lines = text.splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 4 or head[0] != "CENTROIDS":
        raise FormatError("expected header 'CENTROIDS <session_id> <k> <d>'", path, 1)
    k, d = int(head[2]), int(head[3])
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != d + 1:
            raise FormatError(f"expected label and {d} values", path, lineno)
        out[fields[0]] = np.array([float(v) for v in fields[1:]])
    if len(out) != k:
        raise FormatError(f"header announces {k} centroids, found {len(out)}", path)
    return head[1], out


def write_centroids(path: str | Path, session_id: str, cents: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(format_centroids(session_id, cents))


def read_centroids(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    return parse_centroids(Path(path).read_bytes(), str(path))
