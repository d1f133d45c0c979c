"""Evaluation metrics: diarization error rate, frame-level OSD scores and EER."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .timeline import SpeakerAnnotation, Timeline, rasterize, timeline_mask

DER_FRAME_SHIFT = 0.01
DEFAULT_COLLAR = 0.25


@dataclass(frozen=True)
class DerBreakdown:
    missed_speech: float
    false_alarm: float
    speaker_confusion: float
    total_reference: float
    der: float
    mapping: tuple[tuple[str, str], ...] = ()

    def report(self) -> str:
        lines = [
            f"missed speech     {self.missed_speech:10.3f} s  ({100 * self.missed_speech / self.total_reference:6.2f}%)",
            f"false alarm       {self.false_alarm:10.3f} s  ({100 * self.false_alarm / self.total_reference:6.2f}%)",
            f"speaker confusion {self.speaker_confusion:10.3f} s  ({100 * self.speaker_confusion / self.total_reference:6.2f}%)",
            f"scored speech     {self.total_reference:10.3f} s",
            f"DER               {100 * self.der:10.2f}%",
            "",
            f"der={self.der:.6f}",
            f"miss={self.missed_speech:.3f}",
            f"fa={self.false_alarm:.3f}",
            f"conf={self.speaker_confusion:.3f}",
            f"total={self.total_reference:.3f}",
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class OsdFrameMetrics:
    precision: float
    recall: float
    f1: float
    counts: tuple[int, int, int]


def _scored_frames(reference: SpeakerAnnotation, collar: float, n: int, shift: float) -> np.ndarray:
    if collar <= 0:
        return np.ones(n, dtype=bool)
    spans = []
    for seg, _ in reference.entries:
        for b in (seg.onset, seg.end):
            spans.append((max(0.0, b - collar), b + collar))
    return ~timeline_mask(Timeline.from_spans(spans), shift, n)


def score_der(
    reference: SpeakerAnnotation,
    hypothesis: SpeakerAnnotation,
    collar: float = DEFAULT_COLLAR,
    score_overlap: bool = True,
    frame_shift: float = DER_FRAME_SHIFT,
) -> DerBreakdown:
    """Frame-based DER under the optimal one-to-one speaker mapping.

    The mapping maximizes co-occurring speaker time over the scored frames
    (Hungarian assignment). ``collar`` seconds around every reference
    boundary are not scored; with ``score_overlap=False`` frames with more
    than one reference speaker are skipped too.
    """
    if reference.session_id != hypothesis.session_id:
        raise ValueError(
            f"session mismatch: reference {reference.session_id!r} vs hypothesis {hypothesis.session_id!r}"
        )
    if not reference.entries:
        raise ValueError("no reference speech")
    horizon = max(reference.extent, hypothesis.extent)
    ref_labels, ref = rasterize(reference, frame_shift, horizon)
    hyp_labels, hyp = rasterize(hypothesis, frame_shift, horizon)
    n = ref.shape[0]
    scored = _scored_frames(reference, collar, n, frame_shift)
    n_ref = ref.sum(axis=1)
    if not score_overlap:
        scored &= n_ref <= 1
    ref, hyp, n_ref = ref[scored], hyp[scored], n_ref[scored]
    n_hyp = hyp.sum(axis=1)
    total = float(n_ref.sum())
    if total == 0:
        raise ValueError("no reference speech")

    mapping: list[tuple[str, str]] = []
    correct = 0.0
    if ref_labels and hyp_labels:
        # labels are already sorted, so the assignment is deterministic
        cooc = ref.T.astype(np.int64) @ hyp.astype(np.int64)
        rows, cols = linear_sum_assignment(-cooc)
        for r, c in zip(rows, cols):
            if cooc[r, c] > 0:
                mapping.append((ref_labels[r], hyp_labels[c]))
                correct += float(cooc[r, c])
    miss = float(np.maximum(n_ref - n_hyp, 0).sum())
    fa = float(np.maximum(n_hyp - n_ref, 0).sum())
    conf = float(np.minimum(n_ref, n_hyp).sum()) - correct
    return DerBreakdown(
        missed_speech=miss * frame_shift,
        false_alarm=fa * frame_shift,
        speaker_confusion=conf * frame_shift,
        total_reference=total * frame_shift,
        der=(miss + fa + conf) / total,
        mapping=tuple(mapping),
    )


def score_osd_frames(reference_overlap, predicted_overlap) -> OsdFrameMetrics:
    ref = np.asarray(reference_overlap, dtype=bool)
    pred = np.asarray(predicted_overlap, dtype=bool)
    if ref.shape != pred.shape:
        raise ValueError(f"frame count mismatch: {ref.shape} vs {pred.shape}")
    tp = int(np.sum(ref & pred))
    fp = int(np.sum(~ref & pred))
    fn = int(np.sum(ref & ~pred))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return OsdFrameMetrics(precision, recall, f1, (tp, fp, fn))


def osd_reference_frames(reference: SpeakerAnnotation, n_frames: int, frame_shift: float = 0.01) -> np.ndarray:
    """Per-frame truth for the overlap class (two or more active speakers)."""
    _, mask = rasterize(reference, frame_shift, n_frames * frame_shift)
    return mask.sum(axis=1) >= 2


def compute_eer(target_scores, nontarget_scores) -> float:
    """Equal error rate, interpolated linearly between adjacent operating points.

    A trial is accepted when its score is >= the threshold.
    """
    tgt = np.sort(np.asarray(target_scores, dtype=float))
    non = np.sort(np.asarray(nontarget_scores, dtype=float))
    if tgt.size == 0 or non.size == 0:
        raise ValueError("EER needs non-empty target and non-target score lists")
    thresholds = np.unique(np.concatenate([tgt, non]))
    frr = np.searchsorted(tgt, thresholds, side="left") / tgt.size
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    # close the curve with the reject-everything point
    frr = np.append(frr, 1.0)
    far = np.append(far, 0.0)
    diff = far - frr
    k = int(np.flatnonzero(diff <= 0)[0])
    if k == 0 or diff[k] == 0:
        return float(far[k])
    t = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(far[k - 1] + t * (far[k] - far[k - 1]))

