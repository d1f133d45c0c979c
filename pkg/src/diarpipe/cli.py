"""Command-line interface: the full pipeline plus one subcommand per stage.

Exit status: 0 on success, 1 for invalid arguments, configuration or input
files, 2 when a processing stage fails.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig, format_config, load_config, validate
from .embedding import read_centroids, read_embeddings, write_centroids, write_embeddings
from .frontend.audio import read_wav, write_wav
from .fusion import fuse
from .osd import read_posteriors, write_posteriors
from .pipeline import (StageError, atomic_write, build_providers, diarize_sessions, run_assign, run_cluster,
                       run_diarize, run_embed, run_enhance, run_osd, run_segment, stage, write_timeline)
from .rttm import FormatError, format_rttm, read_one, read_rttm, read_timeline
from .scoring import DerBreakdown, score_der

log = logging.getLogger("diarpipe")

VALIDATION = 1
RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(VALIDATION, f"{self.prog}: error: {message}\n")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "session", None):
        cfg = cfg.with_values(pipeline={"oracle_session": str(args.session)})
    return cfg


def _ready(args, need_session: bool = True) -> PipelineConfig:
    return validate(_config(args), need_oracle_session=need_session)


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file {p} does not exist")
    return p


class _Outputs:
    """Remove every listed output if the command fails halfway."""

    def __init__(self, *paths):
        self.paths = [Path(p) for p in paths if p is not None]

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for p in self.paths:
                p.unlink(missing_ok=True)
        return False


def cmd_enhance(args) -> int:
    cfg = _ready(args, need_session=False)
    raw = read_wav(_need(args.audio))
    with _Outputs(args.out), stage("enhance", Path(args.audio).stem):
        write_wav(args.out, run_enhance(raw, cfg))
    return 0


def cmd_osd(args) -> int:
    cfg = _ready(args)
    raw = read_wav(_need(args.audio))
    sid = args.session_id or Path(args.audio).stem
    with _Outputs(args.out):
        with stage("providers", sid):
            providers = build_providers(cfg, sid)
        with stage("osd", sid):
            post = run_osd(raw, cfg, providers.osd)
        write_posteriors(args.out, sid, post)
    return 0


def cmd_segment(args) -> int:
    cfg = _ready(args)
    _, post = read_posteriors(_need(args.posteriors))
    sid, vad = read_timeline(_need(args.vad))
    enhanced = read_wav(_need(args.audio))
    with _Outputs(args.overlap_out, args.single_out, args.embeddings_out):
        with stage("segment", sid):
            overlap, single = run_segment(post, vad, cfg)
        write_timeline(args.overlap_out, overlap, sid, "overlap")
        write_timeline(args.single_out, single, sid, "single")
        with stage("providers", sid):
            providers = build_providers(cfg, sid)
        with stage("embed", sid):
            emb = run_embed(enhanced, single, cfg, providers.embedding)
        write_embeddings(args.embeddings_out, sid, emb)
    return 0


def cmd_cluster(args) -> int:
    cfg = _ready(args, need_session=False)
    sid, single = read_timeline(_need(args.single))
    _, overlap = read_timeline(_need(args.overlap))
    _, emb = read_embeddings(_need(args.embeddings))
    with _Outputs(args.out, args.centroids_out), stage("cluster", sid):
        labelled, cents = run_cluster(emb, single, overlap, cfg, sid)
        atomic_write(args.out, format_rttm(labelled))
        write_centroids(args.centroids_out, sid, cents)
    return 0


def cmd_assign(args) -> int:
    cfg = _ready(args, need_session=False)
    _, overlap = read_timeline(_need(args.overlap))
    labelled = read_one(_need(args.labelled))
    sid = labelled.session_id
    _, cents = read_centroids(_need(args.centroids))
    enhanced = read_wav(_need(args.audio))
    if cfg.overlap.mode == "separation" and overlap:
        validate(cfg)
    with _Outputs(args.out):
        with stage("providers", sid):
            providers = build_providers(cfg, sid) if cfg.overlap.mode == "separation" and overlap else None
        with stage("assign-overlap", sid):
            hyp = run_assign(labelled, overlap, cents, enhanced, cfg, providers)
        atomic_write(args.out, format_rttm(hyp))
    return 0


def cmd_fuse(args) -> int:
    cfg = _config(args)
    weighting = args.weighting or cfg.fusion.weighting
    exponent = args.rank_exponent if args.rank_exponent is not None else cfg.fusion.rank_exponent
    hyps = [read_one(_need(p)) for p in args.inputs]
    with _Outputs(args.out), stage("fuse", hyps[0].session_id):
        atomic_write(args.out, format_rttm(fuse(hyps, weighting, exponent)))
    return 0


def cmd_score(args) -> int:
    cfg = _config(args)
    collar = args.collar if args.collar is not None else cfg.scoring.collar
    score_overlap = cfg.scoring.score_overlap and not args.no_score_overlap
    refs = {a.session_id: a for a in read_rttm(_need(args.ref))}
    hyps = {a.session_id: a for a in read_rttm(_need(args.hyp))}
    if not refs:
        raise UsageError(f"{args.ref} holds no reference speech")
    results = []
    for sid, ref in refs.items():
        hyp = hyps.get(sid, ref.__class__(sid))
        res = score_der(ref, hyp, collar=collar, score_overlap=score_overlap)
        results.append(res)
        if len(refs) > 1:
            print(f"== {sid}")
            print(res.report())
    if len(refs) == 1:
        print(results[0].report())
    else:
        total = sum(r.total_reference for r in results)
        miss = sum(r.missed_speech for r in results)
        fa = sum(r.false_alarm for r in results)
        conf = sum(r.speaker_confusion for r in results)
        print("== overall")
        print(DerBreakdown(miss, fa, conf, total, (miss + fa + conf) / total, {}).report())
    return 0


def cmd_simulate(args) -> int:
    from .sim import MeetingSpec, generate_session, save_session, write_provider_files

    out = Path(args.out)
    for k in range(args.count):
        seed = args.seed + k
        spec = MeetingSpec(num_speakers=args.speakers, duration=args.duration, overlap_target=args.overlap,
                           turn_length=args.turn_length, seed=seed, num_channels=args.channels,
                           reverb=args.reverb)
        target = out if args.count == 1 else out / spec.sid
        session = generate_session(spec)
        save_session(session, target)
        if args.provider_files:
            write_provider_files(session, target, _config(args))
        print(target)
    return 0


def cmd_diarize(args) -> int:
    if args.sessions:
        cfg = _ready(args, need_session=False)
        out_dir = Path(args.out_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        dirs = [Path(d) for d in args.sessions]
        for d in dirs:
            _need(d / "session.npz")
        outs = [out_dir / f"{d.name}.rttm" for d in dirs]
        jobs = args.jobs or cfg.pipeline.jobs
        for p in diarize_sessions(dirs, outs, cfg, jobs):
            print(p)
        return 0
    if not (args.audio and args.vad and args.out):
        raise UsageError("diarize needs --audio, --vad and --out, or --sessions")
    cfg = _ready(args)
    run_diarize(_need(args.audio), _need(args.vad), cfg, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diarpipe", description="Speaker diarization toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_text, session=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=argparse.SUPPRESS, help="INI configuration file")
        if session:
            p.add_argument("--session", help="simulated session directory backing oracle providers")
        p.set_defaults(func=func)
        return p

    p = add("enhance", cmd_enhance, "WPE + delay-and-sum: multi-channel WAV in, one channel out", session=False)
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)

    p = add("osd", cmd_osd, "overlapped-speech posteriors from raw multi-channel audio")
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--session-id")

    p = add("segment", cmd_segment, "split VAD into overlap/single regions and embed single-speaker sub-segments")
    p.add_argument("--posteriors", required=True)
    p.add_argument("--vad", required=True)
    p.add_argument("--audio", required=True, help="enhanced single-channel WAV")
    p.add_argument("--overlap-out", required=True)
    p.add_argument("--single-out", required=True)
    p.add_argument("--embeddings-out", required=True)

    p = add("cluster", cmd_cluster, "NMESC clustering of sub-segment embeddings", session=False)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--single", required=True)
    p.add_argument("--overlap", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--centroids-out", required=True)

    p = add("assign-overlap", cmd_assign, "label overlapped regions and write the final RTTM")
    p.add_argument("--labelled", required=True)
    p.add_argument("--overlap", required=True)
    p.add_argument("--centroids", required=True)
    p.add_argument("--audio", required=True, help="enhanced single-channel WAV")
    p.add_argument("--out", required=True)

    p = add("fuse", cmd_fuse, "DOVER-Lap fusion of several RTTM hypotheses", session=False)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--weighting", choices=["rank", "uniform"])
    p.add_argument("--rank-exponent", type=float)

    p = add("score", cmd_score, "DER of a hypothesis RTTM against a reference RTTM", session=False)
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--collar", type=float)
    p.add_argument("--no-score-overlap", action="store_true", help="skip frames with several reference speakers")

    p = add("simulate", cmd_simulate, "write synthetic session directories", session=False)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--overlap", type=float, default=0.1, help="target overlap ratio")
    p.add_argument("--turn-length", type=float, default=3.0)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--reverb", action="store_true")
    p.add_argument("--provider-files", action="store_true",
                   help="also write posterior and embedding files so file-based configs can run")

    p = add("diarize", cmd_diarize, "run the whole pipeline")
    p.add_argument("--audio")
    p.add_argument("--vad")
    p.add_argument("--out")
    p.add_argument("--sessions", nargs="+", help="simulated session directories")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int)

    add("print-config", lambda args: _print_config(args), "print the effective configuration", session=False)
    return parser


def _print_config(args) -> int:
    sys.stdout.write(format_config(_config(args)))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.print_config:
            return _print_config(args)
        if not args.command:
            parser.print_help(sys.stderr)
            return VALIDATION
        return args.func(args)
    except StageError as exc:
        print(f"diarpipe: {exc}", file=sys.stderr)
        return RUNTIME
    except (ConfigError, FormatError, UsageError, FileNotFoundError, ValueError) as exc:
        print(f"diarpipe: error: {exc}", file=sys.stderr)
        return VALIDATION


if __name__ == "__main__":
    sys.exit(main())
