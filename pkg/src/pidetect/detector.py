"""Prediction-inconsistency scoring between a primal and an auxiliary model.

The primal model ``f`` supplies a hard label (argmax); the auxiliary model
``g`` is asked how much it believes that label.  Four scores are provided:

==========  ======================================  ========
metric_id   value                                   range
==========  ======================================  ========
1           ``1 - g[y]``                            [0, 1]
2           ``f[y] - g[y]``                         [-1, 1]
3           ``sum |f - g|`` over f's top-n labels   [0, 2]
4           ``sum |f - g|`` over all labels         [0, 2]
==========  ======================================  ========

with ``y = argmax f``.  Every scoring function accepts a single vector of
shape ``(k,)`` or a batch of shape ``(m, k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError, ValidationError

SIMPLEX_SUM_TOL = 1e-6
NEGATIVE_TOL = 1e-9
METRIC_IDS = (1, 2, 3, 4)
METRIC_RANGES = {1: (0.0, 1.0), 2: (-1.0, 1.0), 3: (0.0, 2.0), 4: (0.0, 2.0)}
ADVERSARIAL = "adversarial"
NORMAL = "normal"


@dataclass(frozen=True)
class InconsistencyScore:
    value: float
    metric_id: int
    n: int | None = None


@dataclass
class DetectorConfig:
    metric_id: int = 1
    n: int = 3
    target_fpr: float = 0.05
    threshold: float | None = None

    def __post_init__(self):
        if self.metric_id not in METRIC_IDS:
            raise ParameterError(f"metric_id must be one of {METRIC_IDS}")
        if self.n < 1:
            raise ParameterError("n must be >= 1")
        if not 0.0 < self.target_fpr < 1.0:
            raise ParameterError("target_fpr must lie in (0, 1)")


def validate_simplex(p) -> np.ndarray:
    """Check that ``p`` (or every row of it) is a probability vector.

    Entries slightly below zero (down to -1e-9) are clamped to 0, which
    absorbs float32 softmax exports from other frameworks.
    """
    arr = np.array(p, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] < 2:
        raise ValidationError("confidence vectors need k >= 2 entries")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("confidence vector contains non-finite values")
    if np.any(arr < -NEGATIVE_TOL) or np.any(arr > 1.0 + NEGATIVE_TOL):
        raise ValidationError("confidence entries must lie in [0, 1]")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_SUM_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValidationError(f"confidence vector sums deviate from 1 by {worst:.3g}")
    np.clip(arr, 0.0, None, out=arr)
    return arr


def _pair(f_scores, g_scores) -> tuple[np.ndarray, np.ndarray]:
    f = validate_simplex(f_scores)
    g = validate_simplex(g_scores)
    if f.shape != g.shape:
        raise ParameterError(f"shape mismatch: f {f.shape} vs g {g.shape}")
    return f, g


def predicted_label(p):
    """Index of the largest confidence; ties go to the lowest index."""
    arr = validate_simplex(p)
    labels = np.argmax(arr, axis=-1)
    return int(labels) if arr.ndim == 1 else labels


def _at_label(scores: np.ndarray, labels) -> np.ndarray:
    return np.take_along_axis(scores, np.expand_dims(labels, -1), axis=-1)[..., 0]


def _top_n_mask(f: np.ndarray, n: int) -> np.ndarray:
    # stable sort of -f: descending, ties by lowest index
    order = np.argsort(-f, axis=-1, kind="stable")[..., :n]
    mask = np.zeros(f.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask


def inconsistency(metric_id: int, f_scores, g_scores, n: int = 3):
    """Raw metric values; a float for one pair, an array for a batch."""
    f, g = _pair(f_scores, g_scores)
    if metric_id in (1, 2):
        y = np.argmax(f, axis=-1)
        g_y = _at_label(g, y)
        value = 1.0 - g_y if metric_id == 1 else _at_label(f, y) - g_y
    elif metric_id == 3:
        if not 1 <= n <= f.shape[-1]:
            raise ParameterError(f"n={n} outside [1, {f.shape[-1]}]")
        # masked entries become exact zeros so n == k reproduces metric 4 bit for bit
        value = np.sum(np.where(_top_n_mask(f, n), np.abs(f - g), 0.0), axis=-1)
    elif metric_id == 4:
        value = np.sum(np.abs(f - g), axis=-1)
    else:
        raise ParameterError(f"unknown metric_id {metric_id}")
    return float(value) if f.ndim == 1 else value


def metric1(f_scores, g_scores) -> InconsistencyScore:
    return InconsistencyScore(inconsistency(1, f_scores, g_scores), 1)


def metric2(f_scores, g_scores) -> InconsistencyScore:
    return InconsistencyScore(inconsistency(2, f_scores, g_scores), 2)


def metric3(f_scores, g_scores, n: int = 3) -> InconsistencyScore:
    return InconsistencyScore(inconsistency(3, f_scores, g_scores, n), 3, n)


def metric4(f_scores, g_scores) -> InconsistencyScore:
    return InconsistencyScore(inconsistency(4, f_scores, g_scores), 4)


def calibrate_threshold(ne_scores: Sequence[float], target_fpr: float) -> float:
    """Threshold from clean scores so that at most ``target_fpr`` exceed it.

    Takes the m-th smallest score with ``m = ceil((1 - target_fpr) * n)``.
    Because decisions use a strict ``>``, the empirical false-positive rate
    on ``ne_scores`` is at most ``(n - m) / n <= target_fpr``.
    """
    scores = np.sort(np.asarray(ne_scores, dtype=np.float64))
    if scores.size == 0:
        raise ParameterError("need at least one clean score to calibrate")
    if not 0.0 < target_fpr < 1.0:
        raise ParameterError("target_fpr must lie in (0, 1)")
    n = scores.size
    # round first so products like 0.9 * 10 do not land on 9.000000000000002
    m = math.ceil(round((1.0 - target_fpr) * n, 9))
    m = min(max(m, 1), n)
    return float(scores[m - 1])


def decide(score, threshold: float) -> str:
    value = score.value if isinstance(score, InconsistencyScore) else float(score)
    return ADVERSARIAL if value > threshold else NORMAL


def flag_rate(scores, threshold: float) -> float:
    """Fraction of ``scores`` strictly above ``threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ParameterError("empty score list")
    return float(np.count_nonzero(scores > threshold) / scores.size)
