"""End-to-end diarization: enhancement, OSD, embeddings, NMESC, overlap assignment.

Each stage is a plain function so the CLI subcommands and the in-memory
pipeline run exactly the same code. Whatever crosses a file boundary in the
chained form (timelines, annotations, 16-bit audio) is quantized the same
way in memory, which keeps both routes byte-identical.
"""
from __future__ import annotations

import logging
import os
import tempfile
import zlib
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import NmescConfig, decide_speaker_count, nmesc
from .config import ConfigError, PipelineConfig, validate
from .embedding import (EmbeddingProvider, EmbeddingSet, FileEmbeddingProvider, SubSegmentPlan, centroids,
                        extract_embeddings, plan_subsegments)
from .frontend import enhance, logmel
from .frontend.audio import MultiChannelAudio, quantize_pcm16, read_wav
from .osd import (FilePosteriorProvider, FramePosteriors, OsdConfig, PosteriorProvider,
                  aggregate_windows, decide_overlap, fuse_posteriors)
from .overlap import FileSeparator, Separator, assign_by_separation, assign_heuristic, merge_results
from .rttm import FormatError, format_rttm, read_timeline, timeline_to_annotation, write_rttm
from .timeline import EPS, Segment, SpeakerAnnotation, Timeline

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, session_id: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed for session {session_id!r}: {cause}")
        self.stage = stage
        self.session_id = session_id
        self.cause = cause


@contextmanager
def stage(name: str, session_id: str):
    try:
        yield
    except (StageError, FormatError):
        raise
    except Exception as exc:
        raise StageError(name, session_id, exc) from exc


@dataclass
class Providers:
    osd: list[PosteriorProvider]
    embedding: EmbeddingProvider
    separator: Separator | None = None


def provider_seed(cfg: PipelineConfig, session_id: str, offset: int) -> int:
    """Seed for one provider: differs per session, per pipeline seed and per provider slot."""
    return (zlib.crc32(session_id.encode("utf-8")) << 24) + cfg.pipeline.seed * 1000 + offset


def build_providers(cfg: PipelineConfig, session_id: str, session=None) -> Providers:
    """Instantiate the configured model stand-ins.

    Oracle sources need a ``SyntheticSession``; when none is passed it is
    loaded from ``[pipeline] oracle_session``.
    """
    from . import sim

    if session is None and cfg.uses_oracle:
        session = sim.load_session(cfg.pipeline.oracle_session)
    if cfg.osd.source == "oracle":
        osd = [sim.oracle_posterior_provider(session, cfg.osd.noise, provider_seed(cfg, session_id, m))
               for m in range(cfg.osd.models)]
    else:
        osd = [FilePosteriorProvider(p) for p in cfg.osd_files()]
    if cfg.embedding.source == "oracle":
        emb = sim.oracle_embedding_provider(session, cfg.embedding.noise_sigma, provider_seed(cfg, session_id, 500))
    else:
        emb = FileEmbeddingProvider(cfg.embedding.file)
    separator = None
    if cfg.overlap.mode == "separation":
        if cfg.overlap.separator == "oracle":
            separator = sim.oracle_separator(session, cfg.overlap.leakage, provider_seed(cfg, session_id, 900))
        else:
            separator = FileSeparator(cfg.overlap.separator_dir, session_id)
    return Providers(osd, emb, separator)


def osd_config(cfg: PipelineConfig) -> OsdConfig:
    o = cfg.osd
    return OsdConfig(o.window, o.stride, o.threshold, o.min_overlap_duration)


def nmesc_config(cfg: PipelineConfig) -> NmescConfig:
    c = cfg.clustering
    return NmescConfig(c.max_speakers, c.max_neighbor_fraction, c.fixed_speakers or None,
                       c.overlap_ratio_rule_threshold, c.kmeans_seed, c.kmeans_restarts)


def run_enhance(audio: MultiChannelAudio, cfg: PipelineConfig) -> MultiChannelAudio:
    """WPE then delay-and-sum, stored as 16-bit; a plain reference channel when disabled."""
    d = cfg.dsp
    if not d.enabled:
        return audio.channel(d.reference_channel)
    out = enhance(audio, d.wpe_taps, d.wpe_delay, d.wpe_iterations, d.frame_length, d.frame_shift,
                  d.reference_channel)
    return quantize_pcm16(out)


def run_osd(raw: MultiChannelAudio, cfg: PipelineConfig, providers: Sequence[PosteriorProvider],
            features: np.ndarray | None = None) -> FramePosteriors:
    """Per-model sliding-window posteriors on the raw multi-channel features, then fused.

    ``features`` lets callers running several systems on one recording reuse
    the log-mel features.
    """
    feats = logmel(raw) if features is None else features
    ocfg = osd_config(cfg)
    return fuse_posteriors([aggregate_windows(p, feats, ocfg) for p in providers])


def run_segment(post: FramePosteriors, vad: Timeline, cfg: PipelineConfig) -> tuple[Timeline, Timeline]:
    overlap, single = decide_overlap(post, vad.quantized(), osd_config(cfg))
    return overlap.quantized(), single.quantized()


def run_embed(enhanced: MultiChannelAudio, single: Timeline, cfg: PipelineConfig,
              provider: EmbeddingProvider) -> EmbeddingSet:
    plan = SubSegmentPlan(cfg.embedding.window, cfg.embedding.shift)
    return extract_embeddings(provider, enhanced, plan_subsegments(single, plan))


def speech_overlap_ratio(overlap: Timeline, single: Timeline) -> float:
    speech = overlap.union(single).duration
    return overlap.duration / speech if speech > 0 else 0.0


def label_regions(single: Timeline, segments: Sequence[Segment], labels: Sequence[str]) -> list[tuple[Segment, str]]:
    """Spread sub-segment labels over the single-speaker regions.

    Within a region, each instant takes the label of the sub-segment whose
    centre is nearest; cut points sit halfway between adjacent centres.
    """
    out = []
    pairs = sorted(zip(segments, labels), key=lambda p: (p[0].onset, p[0].end))
    k = 0
    for region in single:
        members = []
        while k < len(pairs) and pairs[k][0].onset < region.end - EPS:
            if pairs[k][0].onset >= region.onset - EPS:
                members.append(pairs[k])
            k += 1
        if not members:
            continue
        centres = [(s.onset + s.end) / 2 for s, _ in members]
        cuts = [region.onset] + [(a + b) / 2 for a, b in zip(centres[:-1], centres[1:])] + [region.end]
        for (_, lab), a, b in zip(members, cuts[:-1], cuts[1:]):
            if b - a > EPS:
                out.append((Segment.span(a, b), lab))
    return out


def run_cluster(emb: EmbeddingSet, single: Timeline, overlap: Timeline, cfg: PipelineConfig,
                session_id: str) -> tuple[SpeakerAnnotation, dict[str, np.ndarray]]:
    """NMESC with the overlap-ratio speaker-count rule; returns labelled single regions and centroids."""
    if not len(emb):
        if overlap:
            raise ValueError("overlapped speech but no single-speaker speech to learn speakers from")
        return SpeakerAnnotation(session_id), {}
    ncfg = nmesc_config(cfg)
    res = nmesc(emb, ncfg)
    k = decide_speaker_count(res.num_speakers, speech_overlap_ratio(overlap, single), ncfg)
    if k != res.num_speakers and ncfg.fixed_speakers is None:
        log.info("%s: speaker count %d -> %d by overlap-ratio rule", session_id, res.num_speakers, k)
        res = nmesc(emb, replace(ncfg, fixed_speakers=k))
    names = [f"S{c + 1}" for c in res.labels]
    labelled = SpeakerAnnotation(session_id, tuple(label_regions(single, emb.segments, names))).quantized()
    return labelled, centroids(emb, names)


def run_assign(labelled: SpeakerAnnotation, overlap: Timeline, cents: dict[str, np.ndarray],
               enhanced: MultiChannelAudio, cfg: PipelineConfig, providers: Providers) -> SpeakerAnnotation:
    if not overlap:
        return labelled
    if cfg.overlap.mode == "heuristic" or len(cents) < 2:
        assignment = assign_heuristic(overlap, labelled)
    else:
        assignment = assign_by_separation(overlap, enhanced, providers.separator, providers.embedding, cents,
                                          labelled, cfg.overlap.max_chunk)
    return merge_results(labelled, assignment).quantized()


@dataclass
class DiarizationResult:
    hypothesis: SpeakerAnnotation
    overlap: Timeline
    single: Timeline
    num_speakers: int


def diarize(raw: MultiChannelAudio, vad: Timeline, session_id: str, cfg: PipelineConfig,
            providers: Providers | None = None, session=None) -> DiarizationResult:
    """In-memory pipeline on one session."""
    with stage("providers", session_id):
        providers = providers or build_providers(cfg, session_id, session)
    with stage("enhance", session_id):
        enhanced = run_enhance(raw, cfg)
    with stage("osd", session_id):
        post = run_osd(raw, cfg, providers.osd)
    with stage("segment", session_id):
        overlap, single = run_segment(post, vad, cfg)
    with stage("embed", session_id):
        emb = run_embed(enhanced, single, cfg, providers.embedding)
    with stage("cluster", session_id):
        labelled, cents = run_cluster(emb, single, overlap, cfg, session_id)
    with stage("assign-overlap", session_id):
        hyp = run_assign(labelled, overlap, cents, enhanced, cfg, providers)
    return DiarizationResult(hyp, overlap, single, len(cents))


def atomic_write(path: str | Path, data: bytes) -> None:
    """Write through a temporary file so a failed run never leaves a partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def run_diarize(audio_path: str | Path, vad_path: str | Path, cfg: PipelineConfig, out_path: str | Path,
                session=None) -> SpeakerAnnotation:
    """Diarize one recording and write the RTTM; on failure nothing is left at ``out_path``."""
    validate(cfg, need_oracle_session=session is None)
    session_id, vad = read_timeline(vad_path)
    ov = cfg.overlap
    if ov.mode == "separation" and ov.separator == "files" and not (Path(ov.separator_dir) / session_id).is_dir():
        raise ConfigError(f"[overlap] separator_dir {ov.separator_dir!r} has no directory for session {session_id!r}")
    with stage("read", session_id):
        raw = read_wav(audio_path)
    out_path = Path(out_path)
    try:
        result = diarize(raw, vad, session_id, cfg, session=session)
        atomic_write(out_path, format_rttm(result.hypothesis))
    except BaseException:
        out_path.unlink(missing_ok=True)
        raise
    return result.hypothesis


def _diarize_session_dir(args: tuple[str, str, PipelineConfig]) -> str:
    from .sim import load_session

    directory, out, cfg = args
    d = Path(directory)
    session = load_session(d)
    run_diarize(d / "mix.wav", d / "vad.rttm", cfg, out, session=session)
    return out


def diarize_sessions(directories: Sequence[str | Path], out_paths: Sequence[str | Path], cfg: PipelineConfig,
                     jobs: int = 1) -> list[str]:
    """Run simulated session directories independently, at most ``jobs`` at a time."""
    tasks = [(str(d), str(o), cfg) for d, o in zip(directories, out_paths)]
    if jobs <= 1 or len(tasks) <= 1:
        return [_diarize_session_dir(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_diarize_session_dir, tasks))


def write_timeline(path: str | Path, timeline: Timeline, session_id: str, label: str) -> None:
    write_rttm(path, timeline_to_annotation(timeline, session_id, label))
