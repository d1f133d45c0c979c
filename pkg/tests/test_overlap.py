import numpy as np
import pytest

from diarpipe.frontend import MultiChannelAudio
from diarpipe.frontend.audio import write_wav
from diarpipe.overlap import (FileSeparator, OverlapAssignment, OverlapDecision, SeparationRefused,
                              assign_by_separation, assign_heuristic, merge_results, split_long)
from diarpipe.sim import MeetingSpec, generate_session, oracle_embedding_provider, oracle_separator
from diarpipe.timeline import Segment, SpeakerAnnotation, Timeline

from conftest import random_annotation

AUDIO = MultiChannelAudio(np.zeros((1, 16000 * 30)), 16000)


def ann(*items, sid="s"):
    return SpeakerAnnotation(sid, tuple((Segment.span(a, b), lab) for lab, a, b in items))


def test_heuristic_two_closest():
    single = ann(("A", 5, 10), ("B", 12, 15), ("C", 20, 25))
    [d] = assign_heuristic(Timeline.from_spans([(10, 12)]), single)
    assert set(d.labels) == {"A", "B"} and d.flag is None


def test_heuristic_inside_gap_between_two():
    single = ann(("A", 0, 4), ("B", 6, 9))
    [d] = assign_heuristic(Timeline.from_spans([(4.5, 5.5)]), single)
    assert set(d.labels) == {"A", "B"}


def test_heuristic_tie_breaks():
    # equal gaps: the longer adjacent segment wins, then label order
    [d] = assign_heuristic(Timeline.from_spans([(2, 2.5)]), ann(("A", 0, 1.5), ("B", 3, 8), ("C", 3, 8)))
    assert d.labels == ("B", "C")
    [d] = assign_heuristic(Timeline.from_spans([(2, 2.5)]), ann(("A", 0, 1.5), ("B", 3, 4), ("C", 3, 5)))
    assert d.labels == ("C", "A")


def test_heuristic_degenerate_single_speaker():
    [d] = assign_heuristic(Timeline.from_spans([(2, 3)]), ann(("A", 0, 2)))
    assert d.labels == ("A",) and d.flag == "degenerate"
    with pytest.raises(ValueError):
        assign_heuristic(Timeline.from_spans([(2, 3)]), SpeakerAnnotation("s"))


def brute_force_pair(seg, single):
    """Scan every (speaker, segment) gap; nearest two speakers with the documented tie-breaks."""
    best = {}
    for s, lab in single.entries:
        gap = max(0.0, seg.onset - s.end, s.onset - seg.end)
        cand = (round(gap, 6), -s.duration)
        if lab not in best or cand < best[lab]:
            best[lab] = cand
    order = sorted(best, key=lambda lab: (best[lab][0], best[lab][1], lab))
    return tuple(order[:2])


def test_heuristic_matches_exhaustive_scan():
    rng = np.random.default_rng(0)
    for _ in range(100):
        single, _ = random_annotation(rng, n_speakers=int(rng.integers(2, 5)))
        spans = [(a, a + rng.uniform(0.1, 2)) for a in rng.uniform(0, 30, 4)]
        overlap = Timeline.from_spans(spans)
        for d in assign_heuristic(overlap, single):
            assert d.labels == brute_force_pair(d.segment, single)


def test_heuristic_relabel_equivariant():
    rng = np.random.default_rng(1)
    single, _ = random_annotation(rng, n_speakers=4)
    overlap = Timeline.from_spans([(3, 4), (11, 12.5)])
    mapping = {"spk0": "z", "spk1": "y", "spk2": "x", "spk3": "w"}
    a = assign_heuristic(overlap, single)
    b = assign_heuristic(overlap, single.relabel(mapping))
    for da, db in zip(a, b):
        assert {mapping[x] for x in da.labels} == set(db.labels)


def test_split_long():
    chunks = split_long(Timeline.from_spans([(0, 7), (10, 12)]))
    got = [x for c in chunks for x in (c.onset, c.end)]
    assert got == pytest.approx([0, 7 / 3, 7 / 3, 14 / 3, 14 / 3, 7, 10, 12])
    assert all(c.duration <= 3 + 1e-9 for c in chunks)


class FakeSeparator:
    def __init__(self, tracks):
        self.tracks = tracks

    def __call__(self, audio, seg):
        n = int(round(seg.duration * 16000))
        return [np.full(n, v) for v in self.tracks]


def table_provider(vectors):
    """Embedding chosen by the constant value of the track."""
    return lambda audio, seg: vectors[float(audio.samples[0, 0])]


CENTS = {"A": np.array([1.0, 0, 0]), "B": np.array([0, 1.0, 0]), "C": np.array([0, 0, 1.0])}


def test_separation_collision_rule():
    # both tracks closest to A (0.9 and 0.6); the weaker track takes its second choice
    v1 = np.array([0.9, 0.3, 0.1])
    v2 = np.array([0.6, 0.1, 0.5])
    provider = table_provider({1.0: v1, 2.0: v2})
    [d] = assign_by_separation(Timeline.from_spans([(1, 2)]), AUDIO, FakeSeparator([1.0, 2.0]), provider, CENTS)
    assert d.labels == ("A", "C")
    assert d.scores[0] > d.scores[1]


def test_separation_distinct_labels_and_errors():
    provider = table_provider({1.0: np.array([1.0, 0.1, 0]), 2.0: np.array([0.1, 1.0, 0])})
    [d] = assign_by_separation(Timeline.from_spans([(1, 2)]), AUDIO, FakeSeparator([1.0, 2.0]), provider, CENTS)
    assert d.labels == ("A", "B")
    with pytest.raises(ValueError, match="tracks"):
        assign_by_separation(Timeline.from_spans([(1, 2)]), AUDIO, FakeSeparator([1.0]), provider, CENTS)
    with pytest.raises(ValueError):
        assign_by_separation(Timeline.from_spans([(1, 2)]), AUDIO, FakeSeparator([1.0, 2.0]), provider,
                             {"A": CENTS["A"]})


def test_silent_track_falls_back_to_heuristic():
    provider = table_provider({1.0: np.array([1.0, 0, 0])})
    single = ann(("B", 0, 1), ("C", 2, 3))
    [d] = assign_by_separation(Timeline.from_spans([(1, 2)]), AUDIO, FakeSeparator([1.0, 0.0]), provider, CENTS,
                               single)
    assert d.flag == "fallback" and set(d.labels) == {"B", "C"}


def test_merge_results():
    single = ann(("A", 0, 5), ("B", 6, 9))
    assert merge_results(single, OverlapAssignment()) == single
    merged = merge_results(single, OverlapAssignment((OverlapDecision(Segment(5, 1), ("A", "B")),)))
    assert merged.track("A").spans() == [(0, 6)] and merged.track("B").spans() == [(5, 9)]


def test_merge_duration_accounting():
    rng = np.random.default_rng(2)
    for _ in range(20):
        ref, _ = random_annotation(rng, n_speakers=3)
        overlap = ref.overlap_timeline()
        single = SpeakerAnnotation.from_timelines("s", {k: t.difference(overlap) for k, t in ref.tracks().items()})
        single = SpeakerAnnotation.from_timelines("s", {k: t.difference(single.overlap_timeline())
                                                       for k, t in single.tracks().items()})
        assignment = assign_heuristic(overlap, single) if single.entries else OverlapAssignment()
        merged = merge_results(single, assignment, overlap)
        n_labels = sum(len(d.labels) for d in assignment)
        expected = single.speech_time + sum(d.segment.duration * len(d.labels) for d in assignment)
        assert merged.speech_time == pytest.approx(expected, abs=1e-6)
        for seg, lab in single.entries:
            assert merged.track(lab).intersection(Timeline((seg,))).duration == pytest.approx(seg.duration)
        assert n_labels == 2 * len(assignment) or not single.entries or len(single.labels) < 2


def test_file_separator(tmp_path):
    seg = Segment(1.25, 0.5)
    sep = FileSeparator(tmp_path, "sess")
    (tmp_path / "sess").mkdir()
    for ch in (0, 1):
        write_wav(sep.path(seg, ch), MultiChannelAudio(np.full(8000, 0.1 * (ch + 1)), 16000))
    assert sep.path(seg, 0).name == "1250_500_ch0.wav"
    tracks = sep(AUDIO, seg)
    assert len(tracks) == 2 and tracks[1][0] == pytest.approx(0.2, abs=1e-4)
    with pytest.raises(FileNotFoundError):
        sep(AUDIO, Segment(9, 1))


def _truth_pair(ref, seg):
    return tuple(sorted(lab for lab, t in ref.tracks().items()
                        if t.intersection(Timeline((seg,))).duration > seg.duration / 2))


def test_separation_beats_heuristic_on_synthetic_sessions():
    correct = {"heuristic": 0, 0.0: 0, 0.2: 0, 0.3: 0, "clean": 0}
    total = {k: 0 for k in correct}
    for seed in range(50):
        s = generate_session(MeetingSpec(num_speakers=3, duration=30, seed=seed, num_channels=1, overlap_target=0.2))
        ref = s.reference
        ov = ref.overlap_timeline()
        single = SpeakerAnnotation.from_timelines(s.session_id, {k: t.difference(ov) for k, t in ref.tracks().items()})
        runs = {"heuristic": assign_heuristic(ov, single)}
        runs["clean"] = assign_by_separation(ov, s.audio, oracle_separator(s, 0.0, seed),
                                             oracle_embedding_provider(s, 0.0, seed), s.prototypes, single)
        # heavy embedding noise so that separation quality shows up in the accuracy
        for leak in (0.0, 0.2, 0.3):
            runs[leak] = assign_by_separation(ov, s.audio, oracle_separator(s, leak, seed),
                                              oracle_embedding_provider(s, 2.5, seed), s.prototypes, single)
        for key, assignment in runs.items():
            for d in assignment:
                correct[key] += tuple(sorted(d.labels)) == _truth_pair(ref, d.segment)
                total[key] += 1
    acc = {k: correct[k] / total[k] for k in correct}
    assert acc["clean"] == 1.0
    assert acc[0.0] > acc[0.3] > acc["heuristic"]
    assert acc[0.2] > acc["heuristic"]


def test_declined_chunk_falls_back_to_heuristic():
    class Declining:
        def __call__(self, audio, segment):
            raise SeparationRefused("only one talker")

    single = ann(("B", 0, 1), ("C", 2, 3))
    provider = table_provider({})
    [d] = assign_by_separation(Timeline.from_spans([(1, 2)]), AUDIO, Declining(), provider, CENTS, single)
    assert d.flag == "fallback" and set(d.labels) == {"B", "C"}
    with pytest.raises(SeparationRefused):
        assign_by_separation(Timeline.from_spans([(1, 2)]), AUDIO, Declining(), provider, CENTS)
