"""Pipeline configuration: an INI file with one section per stage.

Every key has a default (``diarpipe print-config`` dumps them). A value can
be overridden from the environment as ``DIARPIPE_<SECTION>_<KEY>``, e.g.
``DIARPIPE_OVERLAP_MODE=heuristic``.
"""
from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

ENV_PREFIX = "DIARPIPE_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DspSection:
    enabled: bool = True
    wpe_taps: int = 10
    wpe_delay: int = 3
    wpe_iterations: int = 3
    frame_length: int = 512
    frame_shift: int = 128
    reference_channel: int = 0


@dataclass(frozen=True)
class OsdSection:
    source: str = "oracle"  # oracle | files
    files: str = ""  # comma-separated OSDPOST paths, one per model
    models: int = 2
    noise: float = 0.0
    window: int = 400
    stride: int = 200
    threshold: float = 0.55
    min_overlap_duration: float = 0.0


@dataclass(frozen=True)
class EmbeddingSection:
    source: str = "oracle"  # oracle | file
    file: str = ""
    noise_sigma: float = 0.0
    window: float = 1.5
    shift: float = 0.25


@dataclass(frozen=True)
class ClusteringSection:
    max_speakers: int = 4
    max_neighbor_fraction: float = 0.5
    fixed_speakers: int = 0  # 0 = estimate
    overlap_ratio_rule_threshold: float = 0.20
    kmeans_seed: int = 7
    kmeans_restarts: int = 10


@dataclass(frozen=True)
class OverlapSection:
    mode: str = "separation"  # heuristic | separation
    separator: str = "oracle"  # oracle | files
    separator_dir: str = ""
    leakage: float = 0.0
    max_chunk: float = 3.0


@dataclass(frozen=True)
class FusionSection:
    weighting: str = "rank"  # rank | uniform
    rank_exponent: float = 1.0


@dataclass(frozen=True)
class ScoringSection:
    collar: float = 0.25
    score_overlap: bool = True


@dataclass(frozen=True)
class PipelineSection:
    seed: int = 0
    oracle_session: str = ""  # simulated session directory backing the oracle sources
    jobs: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    dsp: DspSection = field(default_factory=DspSection)
    osd: OsdSection = field(default_factory=OsdSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    clustering: ClusteringSection = field(default_factory=ClusteringSection)
    overlap: OverlapSection = field(default_factory=OverlapSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    scoring: ScoringSection = field(default_factory=ScoringSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)

    def with_values(self, **sections: dict) -> "PipelineConfig":
        """Copy with some keys replaced: ``cfg.with_values(overlap={"mode": "heuristic"})``."""
        updated = {}
        for name, values in sections.items():
            section = getattr(self, name)
            known = {f.name for f in fields(section)}
            unknown = set(values) - known
            if unknown:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
            updated[name] = replace(section, **values)
        return replace(self, **updated)

    @property
    def uses_oracle(self) -> bool:
        return (self.osd.source == "oracle" or self.embedding.source == "oracle"
                or (self.overlap.mode == "separation" and self.overlap.separator == "oracle"))

    def osd_files(self) -> list[str]:
        return [p.strip() for p in self.osd.files.split(",") if p.strip()]


SECTIONS = [f.name for f in fields(PipelineConfig)]


def _convert(raw: str, kind, where: str):
    try:
        if kind in (bool, "bool"):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {getattr(kind, '__name__', kind)}") from None
    return raw.strip()


def _apply(cfg: PipelineConfig, section: str, key: str, raw: str, where: str) -> PipelineConfig:
    if section not in SECTIONS:
        raise ConfigError(f"{where}: unknown section [{section}]")
    sec = getattr(cfg, section)
    types = {f.name: f.type for f in fields(sec)}
    if key not in types:
        raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
    return cfg.with_values(**{section: {key: _convert(raw, types[key], where)}})


def parse_config(text: str, source: str = "<config>", environ: dict | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = PipelineConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg = _apply(cfg, section, key, raw, f"{source} [{section}] {key}")
    return apply_env(cfg, os.environ if environ is None else environ)


def apply_env(cfg: PipelineConfig, environ) -> PipelineConfig:
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section = next((s for s in SECTIONS if rest.startswith(s + "_")), None)
        if section is None:
            raise ConfigError(f"environment variable {name} names no config section")
        cfg = _apply(cfg, section, rest[len(section) + 1:], raw, name)
    return cfg


def load_config(path: str | Path | None = None, environ: dict | None = None) -> PipelineConfig:
    if path is None:
        return apply_env(PipelineConfig(), os.environ if environ is None else environ)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text(encoding="utf-8"), str(p), environ)


def format_config(cfg: PipelineConfig = PipelineConfig()) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for name in SECTIONS:
        sec = getattr(cfg, name)
        parser[name] = {f.name: _render(getattr(sec, f.name)) for f in fields(sec)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _check(cond: bool, message: str, errors: list[str]):
    if not cond:
        errors.append(message)


def validate(cfg: PipelineConfig, need_oracle_session: bool = True) -> PipelineConfig:
    """Reject anything the pipeline would fail on later. Returns ``cfg`` unchanged.

    ``need_oracle_session=False`` skips the oracle-session check, for callers
    that supply the session themselves.
    """
    e: list[str] = []
    d, o, em, cl, ov = cfg.dsp, cfg.osd, cfg.embedding, cfg.clustering, cfg.overlap
    _check(d.wpe_taps >= 1 and d.wpe_delay >= 1, "[dsp] wpe_taps and wpe_delay must be >= 1", e)
    _check(d.wpe_iterations >= 0, "[dsp] wpe_iterations must be >= 0", e)
    _check(0 < d.frame_shift <= d.frame_length, "[dsp] need 0 < frame_shift <= frame_length", e)
    _check(d.frame_length & (d.frame_length - 1) == 0, "[dsp] frame_length must be a power of two", e)
    _check(d.reference_channel >= 0, "[dsp] reference_channel must be >= 0", e)

    _check(o.source in ("oracle", "files"), f"[osd] source must be oracle or files, not {o.source!r}", e)
    _check(o.window >= 1 and 0 < o.stride <= o.window, "[osd] need window >= 1 and 0 < stride <= window", e)
    _check(0 < o.threshold < 1, "[osd] threshold must be in (0, 1)", e)
    _check(o.min_overlap_duration >= 0, "[osd] min_overlap_duration must be >= 0", e)
    if o.source == "oracle":
        _check(o.models >= 1, "[osd] models must be >= 1", e)
        _check(0 <= o.noise < 0.5, "[osd] noise must be in [0, 0.5)", e)
    else:
        files = cfg.osd_files()
        _check(bool(files), "[osd] source=files needs at least one path in files", e)
        for f in files:
            _check(Path(f).is_file(), f"[osd] posterior file {f} does not exist", e)

    _check(em.source in ("oracle", "file"), f"[embedding] source must be oracle or file, not {em.source!r}", e)
    _check(0 < em.shift <= em.window, "[embedding] need 0 < shift <= window", e)
    _check(em.noise_sigma >= 0, "[embedding] noise_sigma must be >= 0", e)
    if em.source == "file":
        _check(bool(em.file) and Path(em.file).is_file(), f"[embedding] embedding file {em.file!r} does not exist", e)

    _check(cl.max_speakers >= 1, "[clustering] max_speakers must be >= 1", e)
    _check(0 < cl.max_neighbor_fraction <= 1, "[clustering] max_neighbor_fraction must be in (0, 1]", e)
    _check(cl.fixed_speakers >= 0, "[clustering] fixed_speakers must be >= 0", e)
    _check(cl.kmeans_restarts >= 1, "[clustering] kmeans_restarts must be >= 1", e)

    _check(ov.mode in ("heuristic", "separation"),
           f"[overlap] mode must be exactly one of heuristic, separation (got {ov.mode!r})", e)
    _check(ov.max_chunk > 0, "[overlap] max_chunk must be positive", e)
    if ov.mode == "separation":
        _check(cl.max_speakers >= 2, "[overlap] separation needs [clustering] max_speakers >= 2", e)
        _check(ov.separator in ("oracle", "files"), f"[overlap] separator must be oracle or files, not {ov.separator!r}", e)
        _check(0 <= ov.leakage < 0.5, "[overlap] leakage must be in [0, 0.5)", e)
        if ov.separator == "files":
            _check(bool(ov.separator_dir) and Path(ov.separator_dir).is_dir(),
                   f"[overlap] separator_dir {ov.separator_dir!r} is not a directory", e)
        # precomputed embeddings only cover the single-speaker sub-segments
        _check(em.source == "oracle", "[overlap] separation needs an embedding source that can embed new audio (oracle)", e)

    _check(cfg.fusion.weighting in ("rank", "uniform"), "[fusion] weighting must be rank or uniform", e)
    _check(cfg.fusion.rank_exponent > 0, "[fusion] rank_exponent must be positive", e)
    _check(cfg.scoring.collar >= 0, "[scoring] collar must be >= 0", e)
    _check(cfg.pipeline.jobs >= 1, "[pipeline] jobs must be >= 1", e)
    _check(cfg.pipeline.seed >= 0, "[pipeline] seed must be >= 0", e)
    if cfg.uses_oracle and need_oracle_session:
        sess = Path(cfg.pipeline.oracle_session) if cfg.pipeline.oracle_session else None
        _check(sess is not None and (sess / "session.npz").is_file(),
               "[pipeline] oracle sources need oracle_session pointing at a simulated session directory", e)
    if e:
        raise ConfigError("; ".join(e))
    return cfg
