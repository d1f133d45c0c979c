import numpy as np
import pytest
from hypothesis import given, strategies as st

from diarpipe.fusion import WeightedHypothesis, doverlap_vote, fuse, map_labels, pairwise_der, rank_weights
from diarpipe.scoring import score_der
from diarpipe.sim import MeetingSpec, sample_reference
from diarpipe.timeline import Segment, SpeakerAnnotation, frame_sets, rasterize, unrasterize

SHIFT = 0.01


def ann(*items, sid="s"):
    return SpeakerAnnotation(sid, tuple((Segment.span(a, b), lab) for lab, a, b in items))


def corrupt(ref: SpeakerAnnotation, rate: float, rng: np.random.Generator, names=None) -> SpeakerAnnotation:
    """Replace a fraction of 10 ms frames with a random speaker set, then rename speakers."""
    labels, mask = rasterize(ref, SHIFT, ref.extent)
    mask = mask.copy()
    hit = np.flatnonzero(rng.random(len(mask)) < rate)
    for i in hit:
        mask[i] = False
        k = int(rng.integers(0, 3))
        mask[i, rng.choice(len(labels), size=min(k, len(labels)), replace=False)] = True
    out = unrasterize(labels, mask, SHIFT, ref.session_id)
    if names:
        out = out.relabel(dict(zip(labels, names)))
    return out


def test_single_hypothesis_unchanged():
    h = ann(("A", 0, 3), ("B", 2, 5))
    assert fuse([h]) is h


def test_three_copies_fuse_to_same():
    h = ann(("A", 0, 3), ("B", 2, 5), ("A", 6, 9))
    assert fuse([h, h, h]) == h


def test_identical_hypotheses_with_different_labels_map_together():
    h = ann(("A", 0, 3), ("B", 2, 5))
    mapped = map_labels([h, h.relabel({"A": "x", "B": "y"})])
    assert mapped[1].hypothesis == h


def test_disjoint_speakers_stay_distinct():
    a = ann(("A", 0, 3))
    b = ann(("A", 5, 8))
    mapped = map_labels([a, b])
    assert set(mapped[0].hypothesis.labels).isdisjoint(mapped[1].hypothesis.labels)
    fused = fuse([a, b], weighting="uniform")
    assert len(fused.labels) == 2


def test_majority_vote():
    a = ann(("A", 0, 4))
    b = ann(("A", 0, 4))
    c = ann(("B", 0, 4))
    assert doverlap_vote([a, b, c], weighting="uniform") == a


def test_permutation_recovery():
    rng = np.random.default_rng(0)
    ref = sample_reference(MeetingSpec(num_speakers=4, duration=40, seed=3))
    for _ in range(10):
        perm = rng.permutation(ref.labels)
        mapping = dict(zip(ref.labels, [f"x{p}" for p in perm]))
        mapped = map_labels([ref, ref.relabel(mapping)])
        assert mapped[1].hypothesis == ref


def test_weights_and_errors():
    h = ann(("A", 0, 3))
    with pytest.raises(ValueError):
        WeightedHypothesis(h, 0.0)
    with pytest.raises(ValueError):
        fuse([])
    with pytest.raises(ValueError):
        fuse([h, ann(("A", 0, 3), sid="other")])
    with pytest.raises(ValueError):
        doverlap_vote([h, h], weighting="bogus")
    # explicit weights override ranking: the heavy hypothesis wins a 1-vs-2 vote
    b = ann(("B", 0, 3))
    out = doverlap_vote([WeightedHypothesis(h, 5.0), WeightedHypothesis(b, 1.0), WeightedHypothesis(b, 1.0)])
    assert out.labels == ["A"]


def test_rank_weights():
    good = ann(("A", 0, 10))
    near = ann(("A", 0, 9.5))
    nearer = ann(("A", 0, 9.8))
    far = ann(("A", 0, 4))
    hyps = [far, good, near, nearer]
    der = pairwise_der(hyps)
    assert der.argmax() == 0
    w = rank_weights(hyps)
    assert w.argmin() == 0 and w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(np.sort(w)[::-1], (1 / np.arange(1, 5)) / (1 / np.arange(1, 5)).sum())
    tied = rank_weights([good, good, good])
    np.testing.assert_allclose(tied, 1 / 3)


def test_silent_regions_emit_nothing_and_counts_round_half_up():
    a = ann(("A", 0, 2), ("B", 1, 2))
    b = ann(("A", 0, 2))
    out = doverlap_vote([a, b], weighting="uniform")
    # weighted mean count in [1, 2) is 1.5, rounded up to 2
    assert out.track("B").spans() == [(1, 2)]
    assert out.support().spans() == [(0, 2)]


def noisy_set(seed, n=3, rate=0.1):
    rng = np.random.default_rng(seed)
    ref = sample_reference(MeetingSpec(num_speakers=int(rng.integers(2, 5)), duration=30, seed=seed))
    hyps = [corrupt(ref, rate, rng, names=[f"h{i}_{k}" for k in range(4)]) for i in range(n)]
    return ref, hyps


def test_order_invariance_with_equal_weights():
    for seed in range(5):
        _, hyps = noisy_set(seed)
        for weighting in ("uniform", "rank"):
            a = fuse(hyps, weighting)
            b = fuse(hyps[::-1], weighting)
            assert score_der(a, b, collar=0).der == pytest.approx(0.0, abs=1e-9)


def test_output_labels_subset_of_inputs():
    for seed in range(5):
        _, hyps = noisy_set(seed)
        mapped = map_labels(hyps)
        pool = set().union(*(m.hypothesis.labels for m in mapped))
        assert set(doverlap_vote(mapped).labels) <= pool


def test_unanimous_regions_are_kept():
    for seed in range(5):
        _, hyps = noisy_set(seed, rate=0.2)
        mapped = [m.hypothesis for m in map_labels(hyps)]
        fused = doverlap_vote(mapped)
        horizon = max(h.extent for h in mapped)
        sets = [frame_sets(h, SHIFT, horizon) for h in mapped]
        out = frame_sets(fused, SHIFT, horizon)
        for i, row in enumerate(zip(*sets)):
            if all(r == row[0] for r in row):
                assert out[i] == row[0]
        # adding the fused output as another vote changes nothing
        again = fuse([fused] + hyps)
        assert score_der(fused, again, collar=0).der < 0.01


def errors(b):
    return b.missed_speech + b.false_alarm + b.speaker_confusion


def test_fusion_of_noisy_copies_improves_on_individuals():
    # default rank weighting: DER pooled over the 50 sessions per system;
    # equal weights: fused beats the best input in every session
    fused_err = total = 0.0
    sys_err = np.zeros(3)
    fused_der, indiv = [], []
    for seed in range(50):
        ref, hyps = noisy_set(seed)
        parts = [score_der(ref, h) for h in hyps]
        f = score_der(ref, fuse(hyps))
        fused_err += errors(f)
        total += f.total_reference
        sys_err += [errors(b) for b in parts]
        fused_der.append(f.der)
        indiv.extend(b.der for b in parts)
        uniform = score_der(ref, fuse(hyps, weighting="uniform")).der
        assert uniform <= min(b.der for b in parts) + 0.005
    assert fused_err / total <= sys_err.min() / total + 0.005
    assert np.median(fused_der) < np.median(indiv)


@given(st.integers(0, 1000))
def test_fuse_of_identical_copies_is_fixed_point(seed):
    ref = sample_reference(MeetingSpec(num_speakers=3, duration=30, seed=seed % 50))
    assert fuse([ref, ref]) == ref
