import numpy as np
import pytest
from hypothesis import given, strategies as st

from diarpipe.embedding import (EmbeddingSet, FileEmbeddingProvider, SubSegmentPlan, centroids, cosine,
                                extract_embeddings, format_centroids, format_embeddings, parse_centroids,
                                parse_embeddings, plan_subsegments, write_embeddings)
from diarpipe.frontend import MultiChannelAudio
from diarpipe.rttm import FormatError
from diarpipe.timeline import Segment, Timeline

AUDIO = MultiChannelAudio(np.zeros((1, 16000)), 16000)


def test_plan_long_segment():
    subs = plan_subsegments(Timeline.from_spans([(0, 3.5)]))
    assert len(subs) == 9
    assert [s.onset for s in subs] == pytest.approx([0.25 * k for k in range(9)])
    assert all(s.duration == pytest.approx(1.5) for s in subs)


def test_plan_short_segment_kept_whole():
    assert plan_subsegments(Timeline.from_spans([(2, 3)])) == [Segment.span(2, 3)]


def test_plan_right_aligned_tail():
    subs = plan_subsegments(Timeline.from_spans([(0, 2.6)]))
    assert subs[-1].end == pytest.approx(2.6) and subs[-1].duration == pytest.approx(1.5)
    assert len(subs) == 5 + 1


@given(st.lists(st.tuples(st.integers(0, 100000), st.integers(1, 9000)), max_size=6),
       st.sampled_from([(1.5, 0.25), (1.0, 0.5), (2.0, 2.0)]))
def test_plan_covers_source_exactly(items, geometry):
    tl = Timeline.from_spans((a / 1000, (a + d) / 1000) for a, d in items)
    plan = SubSegmentPlan(*geometry)
    subs = plan_subsegments(tl, plan)
    for s in subs:
        assert any(src.onset - 1e-9 <= s.onset and s.end <= src.end + 1e-9 for src in tl)
    covered = Timeline.from_spans((s.onset, s.end) for s in subs)
    assert abs(covered.duration - tl.duration) < 1e-6
    for src in tl:
        inside = [s for s in subs if src.onset - 1e-9 <= s.onset < src.end]
        if src.duration > plan.window:
            expected = int(np.floor((src.duration - plan.window) / plan.shift + 1e-9)) + 1
            assert len(inside) in (expected, expected + 1)


def test_plan_rejects_bad_geometry():
    with pytest.raises(ValueError):
        SubSegmentPlan(1.0, 2.0)


def test_extract_empty_and_constant():
    const = lambda audio, seg: np.array([3.0, 4.0])
    assert len(extract_embeddings(const, AUDIO, [])) == 0
    emb = extract_embeddings(const, AUDIO, [Segment(0, 0.5), Segment(0.5, 0.5)])
    np.testing.assert_allclose(emb.vectors, [[0.6, 0.8], [0.6, 0.8]])


def test_extract_matches_direct_calls():
    rng = np.random.default_rng(0)
    table = {}

    def provider(audio, seg):
        return table.setdefault(seg, rng.normal(size=8))

    segs = [Segment(0.1 * k, 0.3) for k in range(6)]
    emb = extract_embeddings(provider, AUDIO, segs)
    for row, seg in zip(emb.vectors, segs):
        np.testing.assert_allclose(row, table[seg] / np.linalg.norm(table[seg]))
    assert np.allclose(np.linalg.norm(emb.vectors, axis=1), 1, atol=1e-6)


def test_extract_dimension_mismatch():
    dims = iter([3, 4])
    with pytest.raises(ValueError, match="inconsistent"):
        extract_embeddings(lambda a, s: np.ones(next(dims)), AUDIO, [Segment(0, 1), Segment(1, 1)])


def test_cosine_examples():
    v = np.array([0.3, -2.0, 1.0])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine([1, 0, 0], [0, 1, 0]) == 0.0
    assert cosine([1, 1, 0], [1, 0, 0]) == pytest.approx(0.7071, abs=1e-4)
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 0])


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.floats(0.01, 100), st.floats(0.01, 100))
def test_cosine_symmetric_and_scale_invariant(a, b, alpha, beta):
    a, b = np.array(a), np.array(b)
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    assert cosine(a, b) == pytest.approx(cosine(b, a), abs=1e-12)
    assert cosine(alpha * a, beta * b) == pytest.approx(cosine(a, b), abs=1e-9)
    assert -1 <= cosine(a, b) <= 1


def unit_rows(rng, n, d=6):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_centroids():
    rng = np.random.default_rng(1)
    v = unit_rows(rng, 5)
    emb = EmbeddingSet(v, tuple(Segment(k, 1) for k in range(5)))
    c = centroids(emb, [0, 1, 1, 1, 1])
    np.testing.assert_allclose(c[0], v[0])
    assert centroids(EmbeddingSet(np.zeros((0, 0)), ()), []) == {}
    anti = EmbeddingSet(np.array([[1.0, 0], [-1.0, 0]]), (Segment(0, 1), Segment(1, 1)))
    with pytest.raises(ValueError, match="degenerate centroid"):
        centroids(anti, ["a", "a"])


def test_centroid_maximizes_mean_cosine_and_ignores_order():
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = unit_rows(rng, 8) + 0.8
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        labels = list(rng.integers(0, 2, 8))
        emb = EmbeddingSet(v, tuple(Segment(k, 1) for k in range(8)))
        cents = centroids(emb, labels)
        for lab, c in cents.items():
            members = v[[i for i, x in enumerate(labels) if x == lab]]
            score = lambda u: np.mean([cosine(u, m) for m in members])
            assert all(score(c) >= score(m) - 1e-12 for m in members)
        perm = rng.permutation(8)
        shuffled = centroids(EmbeddingSet(v[perm], tuple(emb.segments[i] for i in perm)), [labels[i] for i in perm])
        for lab in cents:
            np.testing.assert_allclose(shuffled[lab], cents[lab], atol=1e-12)


def test_embed_file_round_trip_and_lookup(tmp_path):
    rng = np.random.default_rng(3)
    for trial in range(20):
        n = int(rng.integers(0, 30))
        segs = tuple(Segment(round(rng.uniform(0, 100), 3), round(rng.uniform(0.1, 1.5), 3)) for _ in range(n))
        emb = EmbeddingSet(unit_rows(rng, n, 16) if n else np.zeros((0, 0)), segs)
        text = format_embeddings("s", emb)
        sid, back = parse_embeddings(text, segments=segs)
        assert sid == "s" and back.segments == segs
        assert np.array_equal(back.vectors, emb.vectors)
        assert format_embeddings("s", back) == text
    write_embeddings(tmp_path / "e.txt", "s", emb)
    provider = FileEmbeddingProvider(tmp_path / "e.txt")
    np.testing.assert_array_equal(provider(AUDIO, Segment.span(segs[0].onset + 5e-4, segs[0].end)), emb.vectors[0])
    with pytest.raises(KeyError):
        provider(AUDIO, Segment(1000, 1))


def test_embed_file_normalizes_and_validates():
    _, emb = parse_embeddings(b"EMBED s 1 2\n0 1.5 3 4\n")
    np.testing.assert_allclose(emb.vectors, [[0.6, 0.8]])
    with pytest.raises(FormatError, match="not aligned"):
        parse_embeddings(b"EMBED s 1 2\n0 1.5 3 4\n", segments=[Segment(0.01, 1.5)])
    for bad in (b"", b"EMBED s 2 2\n0 1 1 0\n", b"EMBED s 1 2\n0 1 1\n", b"EMBED s 1 2\n0 1 0 0\n", b"EMB s 1 2\n"):
        with pytest.raises(FormatError):
            parse_embeddings(bad)


def test_centroid_file_round_trip():
    rng = np.random.default_rng(4)
    cents = {f"S{k}": row for k, row in enumerate(unit_rows(rng, 3, 5))}
    sid, back = parse_centroids(format_centroids("x", cents))
    assert sid == "x" and set(back) == set(cents)
    for k in cents:
        assert np.array_equal(back[k], cents[k])
    with pytest.raises(FormatError):
        parse_centroids(b"CENTROIDS x 2 5\n")
