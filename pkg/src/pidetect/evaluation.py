"""ROC / AUC utilities and score-distribution summaries.

AUC follows the Mann-Whitney convention: the probability that a random
adversarial score beats a random clean score, with ties worth one half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass
class RocCurve:
    points: list[tuple[float, float]]
    auc: float


@dataclass
class ScoreSummary:
    bin_edges: list[float]
    counts: list[int]
    mean: float
    quantiles: dict[str, float]


def _scores(adv_scores, clean_scores):
    adv = np.asarray(adv_scores, dtype=np.float64).ravel()
    clean = np.asarray(clean_scores, dtype=np.float64).ravel()
    if adv.size == 0 or clean.size == 0:
        raise ParameterError("both score lists must be non-empty")
    return adv, clean


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their average rank."""
    uniq, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    return (upper - (counts - 1) / 2.0)[inverse]


def auc(adv_scores, clean_scores) -> float:
    """Rank-sum AUC in O((a + c) log(a + c))."""
    adv, clean = _scores(adv_scores, clean_scores)
    ranks = midranks(np.concatenate([adv, clean]))
    a, c = adv.size, clean.size
    u = ranks[:a].sum() - a * (a + 1) / 2.0
    return float(u / (a * c))


def auc_bruteforce(adv_scores, clean_scores) -> float:
    """Pairwise reference implementation, O(a * c)."""
    adv, clean = _scores(adv_scores, clean_scores)
    wins = 0.0
    for s in adv.tolist():
        for t in clean.tolist():
            if s > t:
                wins += 1.0
            elif s == t:
                wins += 0.5
    return wins / (adv.size * clean.size)


def roc_curve(adv_scores, clean_scores) -> RocCurve:
    """Sweep thresholds over the distinct scores (flag iff score > threshold).

    Tied scores move together, so the trapezoid area over the returned
    points equals the Mann-Whitney AUC.
    """
    adv, clean = _scores(adv_scores, clean_scores)
    thresholds = np.unique(np.concatenate([adv, clean]))[::-1]
    adv_sorted, clean_sorted = np.sort(adv), np.sort(clean)
    # counts strictly above each threshold
    tp = adv.size - np.searchsorted(adv_sorted, thresholds, side="right")
    fp = clean.size - np.searchsorted(clean_sorted, thresholds, side="right")
    tp = np.concatenate([tp, [adv.size]])
    fp = np.concatenate([fp, [clean.size]])
    area2 = np.sum(np.diff(fp) * (tp[1:] + tp[:-1]))  # integer, exact
    points = [(0.0, 0.0)] + [
        (float(x) / clean.size, float(t) / adv.size) for x, t in zip(fp[1:], tp[1:])
    ]
    return RocCurve(points, float(area2) / (2.0 * adv.size * clean.size))


def trapezoid_area(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


def score_distribution_summary(scores, bins: int = 10) -> ScoreSummary:
    """Equal-width histogram over [min, max] plus mean and 5/50/95% quantiles."""
    values = np.asarray(scores, dtype=np.float64).ravel()
    if values.size == 0:
        raise ParameterError("empty score list")
    if bins < 1:
        raise ParameterError("bins must be >= 1")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        edges, counts = np.array([lo, hi]), np.array([values.size])
    else:
        counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    q = np.quantile(values, [0.05, 0.5, 0.95])
    return ScoreSummary(
        edges.tolist(),
        counts.astype(int).tolist(),
        float(values.mean()),
        {"q05": float(q[0]), "q50": float(q[1]), "q95": float(q[2])},
    )
