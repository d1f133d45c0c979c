"""Synthetic meetings with ground truth and oracle providers.

A session is a pure function of its ``MeetingSpec``: turn-taking timeline,
band-limited noise sources with speaker-specific spectra, an 8-channel mix
and one unit-norm prototype vector per speaker.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .frontend.audio import MultiChannelAudio, quantize_pcm16, read_wav, write_wav
from .osd import OraclePosteriorProvider
from .overlap import SeparationRefused
from .rttm import read_one, timeline_to_annotation, write_rttm
from .timeline import EPS, Segment, SpeakerAnnotation, Timeline, rasterize, unrasterize

SAMPLE_RATE = 16000
MAX_ATTEMPTS = 400
RATIO_TOL = 0.04
MAX_PROTO_COSINE = 0.4
FRAME = 0.01


@dataclass(frozen=True)
class MeetingSpec:
    num_speakers: int = 4
    duration: float = 60.0
    overlap_target: float = 0.1
    turn_length: float = 3.0
    seed: int = 0
    gap_length: float = 0.6
    backchannel_prob: float = 0.3
    num_channels: int = 8
    reverb: bool = False
    rt60: float = 0.3
    snr_db: tuple[float, float] = (-5.0, 5.0)
    embedding_dim: int = 64
    session_id: str | None = None

    def __post_init__(self):
        if not 2 <= self.num_speakers <= 4:
            raise ValueError("num_speakers must be 2..4")
        if self.duration < 30:
            raise ValueError("duration must be at least 30 s")
        if not 0 <= self.overlap_target <= 0.5:
            raise ValueError("overlap_target must be in [0, 0.5]")
        if self.turn_length <= 0 or self.gap_length <= 0:
            raise ValueError("turn and gap lengths must be positive")
        if self.num_channels < 1:
            raise ValueError("num_channels must be >= 1")

    @property
    def sid(self) -> str:
        return self.session_id or f"sim{self.seed:04d}"


@dataclass(frozen=True)
class SyntheticSession:
    spec: MeetingSpec
    reference: SpeakerAnnotation
    audio: MultiChannelAudio
    sources: np.ndarray  # (speakers, samples), dry
    prototypes: dict[str, np.ndarray]
    delays: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=int))

    @property
    def session_id(self) -> str:
        return self.reference.session_id

    @property
    def speakers(self) -> list[str]:
        return list(self.prototypes)

    @property
    def vad(self) -> Timeline:
        return self.reference.support()


def _ms(x: float) -> float:
    return round(x, 3)


def _turns(spec: MeetingSpec, p_overlap: float, rng: np.random.Generator) -> list[tuple[float, float, int]]:
    """Sequential turns; an overlapping turn starts inside the latest-ending one.

    Every new turn starts after all turns except the latest-ending one have
    finished, so at most two speakers are ever active.
    """
    turns: list[tuple[float, float, int]] = []
    order = list(rng.permutation(spec.num_speakers))
    talk = [0.0] * spec.num_speakers
    t = _ms(rng.uniform(0.1, 1.0))
    while True:
        if turns:
            ends = sorted(turns, key=lambda x: x[1])
            latest = ends[-1]
            floor = ends[-2][1] if len(ends) > 1 else 0.0
        length = max(0.3, rng.exponential(spec.turn_length))
        if order:
            spk = order.pop(0)
        else:
            # favour whoever has spoken least so every speaker gets a fair share
            others = [k for k in range(spec.num_speakers) if k != latest[2]]
            w = np.array([1.0 / (1.0 + talk[k]) ** 2 for k in others])
            spk = int(others[rng.choice(len(others), p=w / w.sum())])
        start = None
        if turns and rng.random() < p_overlap:
            l_start, l_end, _ = latest
            if rng.random() < spec.backchannel_prob:
                # short turn embedded in the latest one
                short = rng.uniform(0.3, 1.2)
                lo, hi = max(floor, l_start) + 0.1, l_end - short - 0.1
                if hi > lo:
                    start = rng.uniform(lo, hi)
                    length = short
            # keep 100 ms between distinct overlap regions
            lo = max(floor + 0.1, l_start)
            if start is None and l_end - lo > 0.2:
                start = l_end - rng.uniform(0.2, 0.8) * (l_end - lo)
            if start is None:
                start = l_end + rng.exponential(spec.gap_length)
        elif turns:
            start = latest[1] + rng.exponential(spec.gap_length)
        else:
            start = t
        start = _ms(start)
        end = _ms(min(start + length, spec.duration))
        if start >= spec.duration - 0.3:
            break
        if end - start >= 0.1:
            turns.append((start, end, spk))
            talk[spk] += end - start
    return turns


def _reference(spec: MeetingSpec, turns) -> SpeakerAnnotation:
    labels = [f"spk{k}" for k in range(spec.num_speakers)]
    # quantized like an RTTM round trip so a saved session reloads to the same reference
    return SpeakerAnnotation(spec.sid, tuple((Segment.span(a, b), labels[k]) for a, b, k in turns)).quantized()


def reference_overlap_ratio(ref: SpeakerAnnotation) -> float:
    speech = ref.support().duration
    return ref.overlap_timeline().duration / speech if speech > 0 else 0.0


def _max_simultaneous(ref: SpeakerAnnotation) -> int:
    events = sorted([(s.onset, 1) for s, _ in ref.entries] + [(s.end, -1) for s, _ in ref.entries],
                    key=lambda e: (e[0], e[1]))
    cur = best = 0
    for _, d in events:
        cur += d
        best = max(best, cur)
    return best


def sample_reference(spec: MeetingSpec) -> SpeakerAnnotation:
    """Draw a turn-taking reference whose overlap ratio is within tolerance of the target.

    Attempt ``a`` uses the RNG seeded with ``(seed, a)``; the overlap
    probability is nudged towards the target between attempts.
    """
    p = min(1.0, spec.overlap_target * 2.5)
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([spec.seed, attempt])
        ref = _reference(spec, _turns(spec, p, rng))
        ratio = reference_overlap_ratio(ref)
        if (abs(ratio - spec.overlap_target) <= RATIO_TOL and len(ref.labels) == spec.num_speakers
                and _max_simultaneous(ref) <= 2):
            return ref
        if spec.overlap_target == 0:
            p = 0.0
        else:
            p = float(np.clip(p + 0.5 * (spec.overlap_target - ratio), 0.0, 1.0))
    raise ValueError(
        f"could not reach overlap target {spec.overlap_target} for a {spec.duration} s session "
        f"with {spec.num_speakers} speakers"
    )


def _envelope(rng: np.random.Generator, n_bins: int) -> np.ndarray:
    freqs = np.linspace(0, SAMPLE_RATE / 2, n_bins)
    env = np.zeros(n_bins)
    for _ in range(3):
        centre = rng.uniform(150, 5500)
        width = rng.uniform(150, 900)
        env += rng.uniform(0.5, 1.0) * np.exp(-0.5 * ((freqs - centre) / width) ** 2)
    env[freqs < 80] = 0.0
    return env


def _source(ref: SpeakerAnnotation, label: str, n: int, rng: np.random.Generator) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n)) * _envelope(rng, n // 2 + 1)
    x = np.fft.irfft(spectrum, n)
    gate = np.zeros(n)
    for seg in ref.track(label):
        gate[int(round(seg.onset * SAMPLE_RATE)) : int(round(seg.end * SAMPLE_RATE))] = 1.0
    active = gate > 0
    if active.any():
        x = x / np.sqrt(np.mean(x[active] ** 2))
    return x * gate


def draw_prototypes(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Unit vectors with pairwise cosine below ``MAX_PROTO_COSINE``."""
    for _ in range(1000):
        v = rng.standard_normal((count, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        gram = v @ v.T
        np.fill_diagonal(gram, 0.0)
        if np.all(gram < MAX_PROTO_COSINE):
            return v
    raise RuntimeError("could not draw separated prototypes")


def _prototypes(spec: MeetingSpec, labels: list[str], rng: np.random.Generator) -> dict[str, np.ndarray]:
    v = draw_prototypes(len(labels), spec.embedding_dim, rng)
    return {lab: v[k] for k, lab in enumerate(labels)}


def synthetic_embeddings(num_speakers: int, num_segments: int, noise_sigma: float, seed: int,
                         dim: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Clustering test data: noisy unit vectors around separated speaker prototypes.

    Each row is ``normalize(prototype + sigma * N(0, I/dim))``, so ``sigma``
    is roughly the angular deviation in radians. Every speaker owns at least
    one row. Returns the vectors and the true speaker index per row.
    """
    if num_segments < num_speakers:
        raise ValueError("need at least one segment per speaker")
    rng = np.random.default_rng(seed)
    protos = draw_prototypes(num_speakers, dim, rng)
    truth = rng.integers(0, num_speakers, num_segments)
    truth[:num_speakers] = np.arange(num_speakers)
    truth = rng.permutation(truth)
    v = protos[truth] + noise_sigma * rng.standard_normal((num_segments, dim)) / math.sqrt(dim)
    return v / np.linalg.norm(v, axis=1, keepdims=True), truth


def _room_response(rng: np.random.Generator, rt60: float) -> np.ndarray:
    n = int(rt60 * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    h = rng.standard_normal(n) * np.exp(-6.9 * t / rt60) * 0.3
    h[0] = 1.0
    return h


def generate_session(spec: MeetingSpec) -> SyntheticSession:
    ref = sample_reference(spec)
    labels = [f"spk{k}" for k in range(spec.num_speakers)]
    n = int(round(spec.duration * SAMPLE_RATE))
    rng = np.random.default_rng([spec.seed, 10_000])
    sources = np.stack([_source(ref, lab, n, rng) for lab in labels])
    protos = _prototypes(spec, labels, rng)
    delays = rng.integers(0, 8, size=(spec.num_speakers, spec.num_channels))
    mix = np.zeros((spec.num_channels, n))
    for k in range(spec.num_speakers):
        for c in range(spec.num_channels):
            s = sources[k]
            if spec.reverb:
                s = fftconvolve(s, _room_response(rng, spec.rt60))[:n]
            d = int(delays[k, c])
            mix[c, d:] += s[: n - d]
    signal_power = float(np.mean(mix**2))
    snr = rng.uniform(*spec.snr_db)
    noise = rng.standard_normal(mix.shape) * math.sqrt(signal_power / 10 ** (snr / 10))
    mix = mix + noise
    # leave headroom for 16-bit storage
    peak = float(np.max(np.abs(mix)))
    scale = 0.9 / peak if peak > 0 else 1.0
    # stored as 16-bit so a saved session reloads to the same samples
    audio = quantize_pcm16(MultiChannelAudio(mix * scale, SAMPLE_RATE))
    return SyntheticSession(spec, ref, audio, sources * scale, protos, delays)


class ActivityIndex:
    """Per-speaker active time inside a query segment, from span arrays built once."""

    def __init__(self, ann: SpeakerAnnotation):
        self.spans = {lab: np.array(tl.spans(), dtype=np.float64).reshape(-1, 2)
                      for lab, tl in ann.tracks().items()}

    def __call__(self, seg: Segment) -> dict[str, float]:
        out = {}
        for lab, sp in self.spans.items():
            d = float(np.clip(np.minimum(sp[:, 1], seg.end) - np.maximum(sp[:, 0], seg.onset), 0, None).sum())
            if d > EPS:
                out[lab] = d
        return out


class OracleEmbeddingProvider:
    """Embeddings built from the speaker prototypes of a synthetic session.

    On session-length audio the vector is the prototypes weighted by each
    speaker's active time in the segment, measured on the same 10 ms frame
    grid the scorer uses. On a shorter excerpt (a separated
    track, positioned by ``audio.offset``) each speaker is weighted by how
    much of its source the excerpt contains, i.e. the non-negative
    projection coefficient onto the source. Noise is ``sigma * N(0, I/d)``,
    seeded by (seed, segment, dominant speaker). A segment with nobody in it
    gives a pure noise vector and is recorded in ``flagged``.
    """

    serial = False

    def __init__(self, session: SyntheticSession, noise_sigma: float = 0.0, seed: int = 0):
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.session = session
        self.sigma = noise_sigma
        self.seed = seed
        self.labels = session.speakers
        self.protos = np.stack([session.prototypes[lab] for lab in self.labels])
        self.flagged: list[Segment] = []
        ref = session.reference
        self.exact = ActivityIndex(ref)
        self.framed = ActivityIndex(unrasterize(*rasterize(ref, FRAME, session.audio.duration), FRAME,
                                                ref.session_id))

    def weights(self, audio: MultiChannelAudio, segment: Segment) -> np.ndarray:
        if audio.num_samples == self.session.audio.num_samples and audio.offset == 0:
            # activity on the 10 ms frame grid; exact times for slivers between frames
            active = self.exact(segment)
            if active:
                active = self.framed(segment) or active
            return np.array([active.get(lab, 0.0) for lab in self.labels])
        x = audio.samples[0]
        a = int(round(audio.offset * SAMPLE_RATE))
        w = np.zeros(len(self.labels))
        for k, src in enumerate(self.session.sources):
            s = src[a : a + x.size]
            energy = float(s @ s)
            if energy > 1e-9 and s.size == x.size:
                w[k] = max(0.0, float(x @ s) / energy)
        return w

    def __call__(self, audio: MultiChannelAudio, segment: Segment) -> np.ndarray:
        w = self.weights(audio, segment)
        dim = self.protos.shape[1]
        dominant = int(np.argmax(w)) if w.any() else -1
        rng = np.random.default_rng(
            [self.seed, int(round(segment.onset * 1000)), int(round(segment.end * 1000)), dominant + 1]
        )
        noise = rng.standard_normal(dim) / math.sqrt(dim)
        if not w.any():
            self.flagged.append(segment)
            return noise / np.linalg.norm(noise)
        v = (w / w.sum()) @ self.protos + self.sigma * noise
        return v / np.linalg.norm(v)


def oracle_embedding_provider(session: SyntheticSession, noise_sigma: float = 0.0, seed: int = 0) -> OracleEmbeddingProvider:
    return OracleEmbeddingProvider(session, noise_sigma, seed)


class OracleSeparator:
    """Returns the two true dry sources of a segment, each with ``leakage`` of the other.

    Track order is shuffled per segment with a seeded RNG.
    """

    def __init__(self, session: SyntheticSession, leakage: float = 0.0, seed: int = 0):
        if not 0 <= leakage < 0.5:
            raise ValueError("leakage must be in [0, 0.5)")
        self.session = session
        self.leakage = leakage
        self.seed = seed
        self.activity = ActivityIndex(session.reference)

    def __call__(self, audio: MultiChannelAudio, segment: Segment) -> list[np.ndarray]:
        active = self.activity(segment)
        if len(active) != 2:
            raise SeparationRefused(
                f"oracle separator needs exactly 2 active speakers in [{segment.onset:.3f}, {segment.end:.3f}), "
                f"found {len(active)}"
            )
        idx = [self.session.speakers.index(lab) for lab in sorted(active)]
        a = int(round(segment.onset * SAMPLE_RATE))
        b = int(round(segment.end * SAMPLE_RATE))
        s0, s1 = (self.session.sources[k][a:b] for k in idx)
        tracks = [s0 + self.leakage * s1, s1 + self.leakage * s0]
        rng = np.random.default_rng([self.seed, int(round(segment.onset * 1000)), int(round(segment.end * 1000))])
        if rng.random() < 0.5:
            tracks.reverse()
        return tracks


def oracle_separator(session: SyntheticSession, leakage: float = 0.0, seed: int = 0) -> OracleSeparator:
    return OracleSeparator(session, leakage, seed)


def oracle_posterior_provider(session: SyntheticSession, noise_level: float = 0.0, seed: int = 0) -> OraclePosteriorProvider:
    return OraclePosteriorProvider(session.reference, noise_level, seed)


def save_session(session: SyntheticSession, directory: str | Path) -> Path:
    """Write ``mix.wav``, ``ref.rttm``, ``vad.rttm`` and ``session.npz`` (sources, prototypes, spec)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_wav(d / "mix.wav", session.audio)
    write_rttm(d / "ref.rttm", session.reference)
    write_rttm(d / "vad.rttm", timeline_to_annotation(session.vad, session.session_id))
    np.savez(
        d / "session.npz",
        sources=session.sources,
        prototypes=np.stack([session.prototypes[lab] for lab in session.speakers]),
        labels=np.array(session.speakers),
        delays=session.delays,
        spec=np.array(json.dumps(asdict(session.spec))),
    )
    return d


def load_session(directory: str | Path) -> SyntheticSession:
    d = Path(directory)
    with np.load(d / "session.npz") as z:
        spec_fields = json.loads(str(z["spec"]))
        spec_fields["snr_db"] = tuple(spec_fields["snr_db"])
        spec = MeetingSpec(**spec_fields)
        protos = {str(lab): z["prototypes"][k] for k, lab in enumerate(z["labels"])}
        sources = z["sources"]
        delays = z["delays"]
    reference = read_one(d / "ref.rttm")
    return SyntheticSession(spec, reference, read_wav(d / "mix.wav"), sources, protos, delays)


def write_provider_files(session: SyntheticSession, directory: str | Path, cfg=None) -> Path:
    """Precompute oracle outputs so a session can be run with file-based providers.

    Writes one ``osd_m<k>.post`` per OSD model, ``embeddings.txt`` for the
    sub-segments a file-based run will ask for, and ``files.ini`` with the
    matching configuration. Separation needs audio-level embeddings, so the
    written config uses heuristic overlap assignment.
    """
    from .config import PipelineConfig, format_config
    from .embedding import write_embeddings
    from .osd import FilePosteriorProvider, audio_frames, write_posteriors
    from .pipeline import provider_seed, run_embed, run_enhance, run_osd, run_segment

    cfg = cfg or PipelineConfig()
    d = Path(directory)
    n = audio_frames(session.audio)
    post_paths = []
    for m in range(cfg.osd.models):
        provider = oracle_posterior_provider(session, cfg.osd.noise, provider_seed(cfg, session.session_id, m))
        path = d / f"osd_m{m}.post"
        write_posteriors(path, session.session_id, _as_posteriors(provider.posteriors(0, n)))
        post_paths.append(str(path.resolve()))
    file_cfg = cfg.with_values(
        osd={"source": "files", "files": ",".join(post_paths)},
        embedding={"source": "file", "file": str((d / "embeddings.txt").resolve())},
        overlap={"mode": "heuristic"},
        pipeline={"oracle_session": ""},
    )
    post = run_osd(session.audio, file_cfg, [FilePosteriorProvider(p) for p in post_paths])
    _, single = run_segment(post, session.vad, file_cfg)
    emb_provider = oracle_embedding_provider(session, cfg.embedding.noise_sigma, provider_seed(cfg, session.session_id, 500))
    emb = run_embed(run_enhance(session.audio, file_cfg), single, file_cfg, emb_provider)
    write_embeddings(d / "embeddings.txt", session.session_id, emb)
    (d / "files.ini").write_text(format_config(file_cfg), encoding="utf-8")
    return d


def _as_posteriors(probs: np.ndarray):
    from .osd import FramePosteriors

    return FramePosteriors(probs)
