"""RTTM reading and writing.

Only ``SPEAKER`` lines are kept. Lines starting with ``;;`` are comments.
The channel column is always written as ``1`` and ignored when reading.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

from .timeline import Segment, SpeakerAnnotation, Timeline


class FormatError(ValueError):
    """A file did not follow its documented format."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line = line


def _decode(text: bytes | str) -> str:
    return text.decode("utf-8") if isinstance(text, (bytes, bytearray)) else text


def parse_rttm(text: bytes | str, path: str | None = None) -> list[SpeakerAnnotation]:
    sessions: dict[str, list[tuple[Segment, str]]] = {}
    for lineno, raw in enumerate(_decode(text).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if len(fields) < 9:
            raise FormatError(f"expected at least 9 fields, got {len(fields)}", path, lineno)
        if fields[0] != "SPEAKER":
            continue
        try:
            onset, duration = float(fields[3]), float(fields[4])
        except ValueError:
            raise FormatError("onset/duration are not numbers", path, lineno) from None
        if duration < 0:
            raise FormatError(f"negative duration {fields[4]}", path, lineno)
        if onset < 0:
            raise FormatError(f"negative onset {fields[3]}", path, lineno)
        entries = sessions.setdefault(fields[1], [])
        if duration > 0:
            entries.append((Segment(onset, duration), fields[7]))
    return [SpeakerAnnotation(sid, tuple(entries)) for sid, entries in sessions.items()]


def format_rttm(ann: SpeakerAnnotation) -> bytes:
    entries = sorted(ann.entries, key=lambda e: (e[0].onset, e[1], e[0].end))
    lines = [
        f"SPEAKER {ann.session_id} 1 {seg.onset:.3f} {seg.duration:.3f} <NA> <NA> {label} <NA> <NA>\n"
        for seg, label in entries
    ]
    return "".join(lines).encode("utf-8")


def read_rttm(path: str | Path) -> list[SpeakerAnnotation]:
    return parse_rttm(Path(path).read_bytes(), path=str(path))


def read_one(path: str | Path, session_id: str | None = None) -> SpeakerAnnotation:
    """Read a single-session RTTM file; an empty file yields an empty annotation."""
    anns = read_rttm(path)
    if session_id is not None:
        anns = [a for a in anns if a.session_id == session_id]
    if len(anns) > 1:
        raise FormatError(f"expected one session, found {len(anns)}", str(path))
    if not anns:
        return SpeakerAnnotation(session_id or Path(path).stem)
    return anns[0]


def write_rttm(path: str | Path, anns: SpeakerAnnotation | Iterable[SpeakerAnnotation]) -> None:
    if isinstance(anns, SpeakerAnnotation):
        anns = [anns]
    Path(path).write_bytes(b"".join(format_rttm(a) for a in anns))


def timeline_to_annotation(timeline: Timeline, session_id: str, label: str = "speech") -> SpeakerAnnotation:
    return SpeakerAnnotation(session_id, tuple((s, label) for s in timeline))


def read_timeline(path: str | Path) -> tuple[str, Timeline]:
    """Read a speech timeline from an RTTM file or a ``start end [label]`` label file.

    All speakers are pooled. Returns the session id (the file stem for label
    files) and the timeline.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    first = next((ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith(";;")), None)
    if first is None:
        return path.stem, Timeline()
    if first[0] == "SPEAKER" or len(first) >= 9:
        ann = read_one(path)
        return ann.session_id, ann.support()
    spans = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        fields = raw.split()
        if not fields or raw.startswith(";;"):
            continue
        try:
            start, end = float(fields[0]), float(fields[1])
        except (ValueError, IndexError):
            raise FormatError("expected '<start> <end> [label]'", str(path), lineno) from None
        if end < start or start < 0:
            raise FormatError(f"bad interval [{start}, {end})", str(path), lineno)
        spans.append((start, end))
    return path.stem, Timeline.from_spans(spans)
