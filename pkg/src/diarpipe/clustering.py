"""NMESC: spectral clustering with automatic neighbor-count and speaker-count selection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from .embedding import EmbeddingSet

GAP_FLOOR = 1e-10


@dataclass(frozen=True)
class NmescConfig:
    max_speakers: int = 4
    max_neighbor_fraction: float = 0.5
    fixed_speakers: int | None = None
    overlap_ratio_rule_threshold: float = 0.20
    kmeans_seed: int = 7
    kmeans_restarts: int = 10

    def __post_init__(self):
        if self.max_speakers < 1:
            raise ValueError("max_speakers must be >= 1")
        if not 0 < self.max_neighbor_fraction <= 1:
            raise ValueError("max_neighbor_fraction must be in (0, 1]")
        if self.fixed_speakers is not None and self.fixed_speakers < 1:
            raise ValueError("fixed_speakers must be >= 1")


@dataclass(frozen=True)
class NmescResult:
    labels: np.ndarray
    num_speakers: int
    p_neighbors: int
    eigengap: float


def affinity_matrix(vectors: np.ndarray) -> np.ndarray:
    """Cosine similarities of all row pairs, exactly symmetric with unit diagonal."""
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / np.maximum(norms, 1e-12)
    aff = np.clip(unit @ unit.T, -1.0, 1.0)
    aff = (aff + aff.T) / 2
    np.fill_diagonal(aff, 1.0)
    return aff


TIE_TOL = 1e-12


@dataclass(frozen=True)
class NeighborOrder:
    """Per row, off-diagonal columns by decreasing similarity (stable) and their values."""
    index: np.ndarray
    value: np.ndarray
    masked: np.ndarray


def neighbor_order(aff: np.ndarray) -> NeighborOrder:
    work = aff.copy()
    np.fill_diagonal(work, -np.inf)
    idx = np.argsort(-work, axis=1, kind="stable")[:, : aff.shape[0] - 1]
    return NeighborOrder(idx, np.take_along_axis(work, idx, axis=1), work)


def binarize(aff: np.ndarray, p: int, order: NeighborOrder | None = None) -> np.ndarray:
    """Keep each row's ``p`` largest off-diagonal entries as 1, then symmetrize.

    Entries tied with a positive p-th largest are kept too, so the graph
    does not depend on row order when several neighbours are equally
    similar. Ties at zero or below are not widened: after clipping, a row
    with fewer than ``p`` positive entries would otherwise link to every
    unrelated row.
    """
    order = neighbor_order(aff) if order is None else order
    n = aff.shape[0]
    b = np.zeros((n, n), dtype=bool)
    b[np.arange(n)[:, None], order.index[:, :p]] = True
    thr = order.value[:, p - 1 : p]
    b |= (order.masked >= thr - TIE_TOL) & (thr > 0)
    b = b.astype(np.float64)
    return (b + b.T) / 2


def laplacian(w: np.ndarray) -> np.ndarray:
    return np.diag(w.sum(axis=1)) - w


def eigengap_stats(eigvals: np.ndarray, max_speakers: int) -> tuple[float, int]:
    """Normalized maximum eigengap and the cluster count it implies.

    The largest of the first ``max_speakers`` gaps of the ascending spectrum
    is divided by the largest eigenvalue, which makes gaps comparable across
    neighbor counts (the Laplacian spectrum grows with ``p``).
    """
    gaps = np.diff(eigvals)[:max_speakers]
    if gaps.size == 0:
        return 0.0, 1
    k = int(np.argmax(gaps))
    top = float(eigvals[-1])
    return (float(gaps[k]) / top if top > GAP_FLOOR else 0.0), k + 1


def _spectral_labels(lap: np.ndarray, k: int, cfg: NmescConfig) -> np.ndarray:
    _, vecs = np.linalg.eigh(lap)
    feats = vecs[:, :k]
    km = KMeans(n_clusters=k, init="k-means++", n_init=cfg.kmeans_restarts, random_state=cfg.kmeans_seed)
    raw = km.fit_predict(feats)
    # relabel in order of first appearance so ids do not depend on k-means internals
    remap: dict[int, int] = {}
    return np.array([remap.setdefault(int(x), len(remap)) for x in raw])


def nmesc(emb: EmbeddingSet | np.ndarray, cfg: NmescConfig = NmescConfig()) -> NmescResult:
    vectors = emb.vectors if isinstance(emb, EmbeddingSet) else np.asarray(emb, dtype=np.float64)
    n = vectors.shape[0]
    if n < 1:
        raise ValueError("nothing to cluster")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("embeddings contain NaN")
    if n == 1:
        return NmescResult(np.zeros(1, dtype=int), 1, 0, 0.0)
    aff = affinity_matrix(vectors)
    if not np.all(np.isfinite(aff)):
        raise ValueError("affinity contains NaN")
    aff = np.maximum(aff, 0.0)

    order = neighbor_order(aff)
    best = None
    p_max = min(n - 1, max(1, math.ceil(n * cfg.max_neighbor_fraction)))
    for p in range(1, p_max + 1):
        lap = laplacian(binarize(aff, p, order))
        gap, k = eigengap_stats(np.linalg.eigvalsh(lap), cfg.max_speakers)
        ratio = (p / n) / max(gap, GAP_FLOOR)
        if best is None or ratio < best[0]:
            best = (ratio, p, gap, k, lap)
    _, p_star, gap, k, lap = best

    if cfg.fixed_speakers is not None:
        k = cfg.fixed_speakers
    if n < k:
        return NmescResult(np.arange(n), n, p_star, gap)
    if k == 1:
        return NmescResult(np.zeros(n, dtype=int), 1, p_star, gap)
    labels = _spectral_labels(lap, k, cfg)
    return NmescResult(labels, int(labels.max()) + 1, p_star, gap)


def nmesc_cluster(emb: EmbeddingSet | np.ndarray, cfg: NmescConfig = NmescConfig()) -> tuple[np.ndarray, int]:
    """Cluster labels per row and the estimated number of speakers."""
    res = nmesc(emb, cfg)
    return res.labels, res.num_speakers


def decide_speaker_count(nmesc_k: int, overlap_ratio: float, cfg: NmescConfig = NmescConfig()) -> int:
    """Apply the dataset prior: heavy overlap means a full meeting (``max_speakers``, 4 by default).

    The rule only ever raises the count; it never lowers an NMESC estimate
    below the cap.
    """
    if nmesc_k < 1:
        raise ValueError("nmesc_k must be >= 1")
    if overlap_ratio > cfg.overlap_ratio_rule_threshold:
        return cfg.max_speakers
    return min(nmesc_k, cfg.max_speakers)
