"""Evaluation metrics: macro-averaged MAE, Spearman's rho, trivial baselines."""

from __future__ import annotations

import numpy as np

from pledgespec.corpus import Corpus


class MetricError(ValueError):
    """Raised when a metric is undefined for the given inputs."""


def mmae(preds, golds) -> float:
    """Mean absolute error averaged per gold class.

    Real-valued predictions are used as-is (no rounding).  Classes absent
    from the gold set are excluded from the macro average.
    """
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(golds)
    if p.size == 0 or p.shape != y.shape:
        raise MetricError(f"need equal non-empty inputs, got {p.shape} vs {y.shape}")
    per_class = per_class_mae(p, y)
    return float(np.mean(list(per_class.values())))


def per_class_mae(preds, golds) -> dict[int, float]:
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(golds)
    if p.size == 0:
        raise MetricError("empty input")
    out: dict[int, float] = {}
    for cls in sorted(np.unique(y).tolist()):
        mask = y == cls
        out[int(cls)] = float(np.mean(np.abs(p[mask] - cls)))
    return out


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties given the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(preds, golds) -> float:
    """Spearman's rho: Pearson correlation of average-rank vectors."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(golds, dtype=np.float64)
    if p.shape != y.shape or p.size < 2:
        raise MetricError(f"need equal inputs of length >= 2, got {p.shape} vs {y.shape}")
    rp = _average_ranks(p)
    ry = _average_ranks(y)
    rp -= rp.mean()
    ry -= ry.mean()
    denom = np.sqrt((rp * rp).sum() * (ry * ry).sum())
    if denom == 0.0:
        raise MetricError("rank variance is zero on one side; rho undefined")
    return float((rp * ry).sum() / denom)


def majority_baseline(train: Corpus) -> int:
    """The most frequent training label (smallest class on ties)."""
    labeled = train.labeled()
    if not labeled:
        raise MetricError("majority baseline needs labeled training data")
    counts: dict[int, int] = {}
    for s in labeled:
        counts[s.label] = counts.get(s.label, 0) + 1
    best = max(sorted(counts), key=lambda k: counts[k])
    return best


def length_baseline(corpus: Corpus) -> np.ndarray:
    """Sentence length as the specificity score (evaluated via rho only)."""
    if len(corpus) == 0:
        raise MetricError("empty corpus")
    return np.array([len(s.tokens) for s in corpus.sentences], dtype=np.float64)
