"""DOVER-Lap: overlap-aware combination of several diarization hypotheses."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .scoring import score_der
from .timeline import EPS, Segment, SpeakerAnnotation, Timeline


@dataclass(frozen=True)
class WeightedHypothesis:
    hypothesis: SpeakerAnnotation
    weight: float | None = None

    def __post_init__(self):
        if self.weight is not None and self.weight <= 0:
            raise ValueError("hypothesis weights must be positive")


def _as_set(hyps) -> list[WeightedHypothesis]:
    out = [h if isinstance(h, WeightedHypothesis) else WeightedHypothesis(h) for h in hyps]
    if not out:
        raise ValueError("need at least one hypothesis")
    sessions = {h.hypothesis.session_id for h in out}
    if len(sessions) > 1:
        raise ValueError(f"hypotheses come from different sessions: {sorted(sessions)}")
    return out


def _fresh_label(label: str, index: int, taken: set[str]) -> str:
    candidate = label
    n = 0
    while candidate in taken:
        n += 1
        candidate = f"{label}_h{index}" if n == 1 else f"{label}_h{index}_{n}"
    return candidate


def map_labels(hyps: Sequence[SpeakerAnnotation | WeightedHypothesis]) -> list[WeightedHypothesis]:
    """Rename speakers so that the same person carries the same label in every hypothesis.

    The first hypothesis is the anchor. Each later one is matched one-to-one
    against all speakers mapped so far, maximizing co-occurring speech
    (Hungarian assignment); speakers with no match get a fresh label.
    """
    hset = _as_set(hyps)
    anchor = hset[0].hypothesis
    pool: dict[str, list[Timeline]] = {lab: [tl] for lab, tl in anchor.tracks().items()}
    out = [hset[0]]
    for index, item in enumerate(hset[1:], start=1):
        tracks = item.hypothesis.tracks()
        labels = list(tracks)
        pool_labels = sorted(pool)
        mapping: dict[str, str] = {}
        if labels and pool_labels:
            cooc = np.array([
                [sum(tracks[a].intersection(t).duration for t in pool[b]) for b in pool_labels]
                for a in labels
            ])
            rows, cols = linear_sum_assignment(-cooc)
            for r, c in zip(rows, cols):
                if cooc[r, c] > EPS:
                    mapping[labels[r]] = pool_labels[c]
        taken = set(pool) | set(mapping.values())
        for lab in labels:
            if lab not in mapping:
                mapping[lab] = _fresh_label(lab, index, taken)
                taken.add(mapping[lab])
        for lab, tl in tracks.items():
            pool.setdefault(mapping[lab], []).append(tl)
        out.append(WeightedHypothesis(item.hypothesis.relabel(mapping), item.weight))
    return out


def pairwise_der(hyps: Sequence[SpeakerAnnotation]) -> np.ndarray:
    """Mean DER of each hypothesis scored against every other one (collar 0, overlap scored)."""
    n = len(hyps)
    out = np.zeros(n)
    for i in range(n):
        ders = [
            score_der(hyps[j], hyps[i], collar=0.0, score_overlap=True).der
            for j in range(n)
            if j != i and hyps[j].entries
        ]
        out[i] = float(np.mean(ders)) if ders else 1.0
    return out


def rank_weights(hyps: Sequence[SpeakerAnnotation], exponent: float = 1.0) -> np.ndarray:
    """Weights proportional to ``1 / rank**exponent``; tied DERs share their mean rank."""
    if len(hyps) == 1:
        return np.ones(1)
    ranks = rankdata(np.round(pairwise_der(hyps), 12), method="average")
    w = 1.0 / ranks**exponent
    return w / w.sum()


def _active(hyp: SpeakerAnnotation):
    spans = {lab: (np.array([s.onset for s in tl]), np.array([s.end for s in tl]))
             for lab, tl in hyp.tracks().items()}

    def at(t: float) -> list[str]:
        out = []
        for lab, (starts, ends) in spans.items():
            k = np.searchsorted(starts, t, side="right") - 1
            if k >= 0 and t < ends[k]:
                out.append(lab)
        return out

    return at


def doverlap_vote(mapped: Sequence[SpeakerAnnotation | WeightedHypothesis], weighting: str = "rank",
                  rank_exponent: float = 1.0) -> SpeakerAnnotation:
    """Weighted per-region voting over label-consistent hypotheses.

    The timeline is cut at every boundary of every hypothesis. In each region
    the number of output speakers is the weighted mean of the hypotheses'
    speaker counts, rounded half up (at least one where anyone speaks), and
    the labels with the most weighted votes win.
    """
    hset = _as_set(mapped)
    hyps = [h.hypothesis for h in hset]
    if all(h.weight is not None for h in hset):
        w = np.array([h.weight for h in hset], dtype=float)
        w = w / w.sum()
    elif weighting == "uniform":
        w = np.full(len(hyps), 1.0 / len(hyps))
    elif weighting == "rank":
        w = rank_weights(hyps, rank_exponent)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")

    totals: dict[str, float] = {}
    for wi, h in zip(w, hyps):
        for seg, lab in h.entries:
            totals[lab] = totals.get(lab, 0.0) + wi * seg.duration

    bounds = sorted({b for h in hyps for seg, _ in h.entries for b in (seg.onset, seg.end)})
    probes = [_active(h) for h in hyps]
    entries: list[tuple[Segment, str]] = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a < EPS:
            continue
        mid = (a + b) / 2
        active = [p(mid) for p in probes]
        if not any(active):
            continue
        expected = float(sum(wi * len(act) for wi, act in zip(w, active)))
        count = max(1, math.floor(expected + 0.5 + 1e-9))
        votes: dict[str, float] = {}
        for wi, act in zip(w, active):
            for lab in act:
                votes[lab] = votes.get(lab, 0.0) + wi
        ranked = sorted(votes, key=lambda lab: (-round(votes[lab], 12), -round(totals[lab], 9), lab))
        seg = Segment.span(a, b)
        entries.extend((seg, lab) for lab in ranked[:count])
    return SpeakerAnnotation(hyps[0].session_id, tuple(entries))


def fuse(hyps: Sequence[SpeakerAnnotation | WeightedHypothesis], weighting: str = "rank",
         rank_exponent: float = 1.0) -> SpeakerAnnotation:
    """Label mapping followed by voting; a single hypothesis is returned unchanged."""
    hset = _as_set(hyps)
    if len(hset) == 1:
        return hset[0].hypothesis
    return doverlap_vote(map_labels(hset), weighting, rank_exponent)
