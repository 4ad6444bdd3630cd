"""Synthetic classification tasks and prediction-record files.

Features always live in the unit box [0, 1]^d so that l-inf budgets are read
in the same units as pixel intensities.  Prediction records are the interop
unit between external models and the detector: one JSON object per line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .detector import validate_simplex
from .errors import ParameterError, RecordParseError, ValidationError
from .seeding import stream

RECORD_KEYS = ("id", "y_true", "f_scores", "g_scores", "is_adversarial")


@dataclass(frozen=True)
class Example:
    x: np.ndarray
    y_true: int


@dataclass(eq=False)
class Dataset:
    """Examples stored row-wise: ``X[i]`` has label ``y[i]``."""

    X: np.ndarray
    y: np.ndarray
    k: int
    name: str = "dataset"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ParameterError("X must be (n, d) and y must be (n,)")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.k):
            raise ParameterError(f"labels must lie in [0, {self.k})")

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return len(self.y)

    @property
    def examples(self) -> list[Example]:
        return [Example(x, int(t)) for x, t in zip(self.X, self.y)]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.k, name or self.name)

    def same_content(self, other: "Dataset") -> bool:
        return (
            self.k == other.k
            and self.X.shape == other.X.shape
            and self.X.tobytes() == other.X.tobytes()
            and self.y.tobytes() == other.y.tobytes()
        )


def _rescale_unit_box(X: np.ndarray) -> np.ndarray:
    # per-dimension shift, one shared scale: keeps clusters isotropic
    lo = X.min(axis=0)
    scale = float((X.max(axis=0) - lo).max())
    if scale <= 0.0:
        scale = 1.0
    return np.clip((X - lo) / scale, 0.0, 1.0)


def _blob_centers(k: int, d: int, separation: float) -> np.ndarray:
    centers = np.zeros((k, d))
    if k <= d:
        # regular simplex vertices: pairwise distance == separation
        centers[np.arange(k), np.arange(k)] = separation / math.sqrt(2.0)
    else:
        # points on a circle in the first two dims, neighbours `separation` apart
        radius = separation / (2.0 * math.sin(math.pi / k))
        angles = 2.0 * math.pi * np.arange(k) / k
        centers[:, 0] = radius * np.cos(angles)
        centers[:, 1] = radius * np.sin(angles)
    return centers


def gen_synthetic(
    kind: str,
    k: int,
    d: int,
    n_per_class: int,
    separation: float,
    seed: int,
) -> Dataset:
    """Generate a seeded synthetic task with ``k * n_per_class`` examples.

    ``blobs`` places unit-variance Gaussian clusters on centers that are
    ``separation`` apart; ``rings`` draws concentric annuli of radius
    ``(c + 1) * separation`` in the first two dimensions.
    """
    if k < 2 or d < 2 or n_per_class < 1:
        raise ParameterError("need k >= 2, d >= 2, n_per_class >= 1")
    if not separation > 0:
        raise ParameterError("separation must be positive")
    rng = stream(seed, "data/gen", kind)
    y = np.repeat(np.arange(k), n_per_class)
    n = len(y)
    if kind == "blobs":
        X = _blob_centers(k, d, separation)[y] + rng.standard_normal((n, d))
    elif kind == "rings":
        X = 0.1 * separation * rng.standard_normal((n, d))
        theta = rng.uniform(0.0, 2.0 * math.pi, n)
        radius = (y + 1) * separation + 0.1 * separation * rng.standard_normal(n)
        X[:, 0] = radius * np.cos(theta)
        X[:, 1] = radius * np.sin(theta)
    else:
        raise ParameterError(f"unknown dataset kind {kind!r}")
    name = f"{kind}-k{k}-d{d}-n{n_per_class}-s{separation:g}-seed{seed}"
    return Dataset(_rescale_unit_box(X), y, k, name)


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [f * n for f in fractions]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(
    ds: Dataset, fractions: Sequence[float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle and partition into (train, calibrate, test)."""
    if len(fractions) != 3:
        raise ParameterError("fractions must be (train, calibrate, test)")
    if any(not f > 0 for f in fractions):
        raise ParameterError("every split fraction must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions sum to {sum(fractions)!r}, not 1")
    perm = stream(seed, "data/split").permutation(len(ds))
    sizes = largest_remainder(len(ds), fractions)
    bounds = np.cumsum([0, *sizes])
    names = ("train", "calibrate", "test")
    return tuple(
        ds.subset(perm[bounds[i] : bounds[i + 1]], f"{ds.name}/{names[i]}")
        for i in range(3)
    )


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    y_true: int
    f_scores: tuple[float, ...]
    g_scores: tuple[float, ...]
    is_adversarial: bool

    @property
    def k(self) -> int:
        return len(self.f_scores)

    def to_json(self) -> str:
        obj = {
            "id": self.id,
            "y_true": self.y_true,
            "f_scores": list(self.f_scores),
            "g_scores": list(self.g_scores),
            "is_adversarial": self.is_adversarial,
        }
        return json.dumps(obj, separators=(", ", ": "), allow_nan=False)


def make_record(id, y_true, f_scores, g_scores, is_adversarial) -> PredictionRecord:
    """Build a validated record; score vectors are checked against the simplex."""
    f = validate_simplex(f_scores)
    g = validate_simplex(g_scores)
    if len(f) != len(g):
        raise ValidationError(f"f_scores has {len(f)} entries, g_scores has {len(g)}")
    y_true = int(y_true)
    if not 0 <= y_true < len(f):
        raise ValidationError(f"y_true={y_true} outside [0, {len(f)})")
    return PredictionRecord(
        str(id), y_true, tuple(map(float, f)), tuple(map(float, g)), bool(is_adversarial)
    )


def _record_from_obj(obj, lineno: int) -> PredictionRecord:
    if not isinstance(obj, dict):
        raise RecordParseError("expected a JSON object", lineno)
    missing = [key for key in RECORD_KEYS if key not in obj]
    extra = sorted(set(obj) - set(RECORD_KEYS))
    if missing or extra:
        raise RecordParseError(f"missing keys {missing}, unexpected keys {extra}", lineno)
    if not isinstance(obj["id"], str):
        raise RecordParseError("id must be a string", lineno)
    if isinstance(obj["y_true"], bool) or not isinstance(obj["y_true"], int):
        raise RecordParseError("y_true must be an integer", lineno)
    if not isinstance(obj["is_adversarial"], bool):
        raise RecordParseError("is_adversarial must be a boolean", lineno)
    for key in ("f_scores", "g_scores"):
        vals = obj[key]
        if not isinstance(vals, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals
        ):
            raise RecordParseError(f"{key} must be an array of numbers", lineno)
    try:
        return make_record(**obj)
    except ValidationError as exc:
        raise ValidationError(f"line {lineno}: {exc}") from exc


def load_prediction_records(path) -> list[PredictionRecord]:
    """Read a record file, validating every line; order is preserved."""
    records: list[PredictionRecord] = []
    header_k = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(exc.msg, lineno) from None
            if lineno == 1 and isinstance(obj, dict) and set(obj) == {"k"}:
                header_k = obj["k"]
                if isinstance(header_k, bool) or not isinstance(header_k, int) or header_k < 2:
                    raise RecordParseError("header k must be an integer >= 2", lineno)
                continue
            rec = _record_from_obj(obj, lineno)
            expected = header_k if header_k is not None else (records[0].k if records else None)
            if expected is not None and rec.k != expected:
                raise ValidationError(
                    f"line {lineno}: record has k={rec.k}, file uses k={expected}"
                )
            records.append(rec)
    return records


def write_prediction_records(path, records: Iterable[PredictionRecord]) -> None:
    """Write records with a ``{"k": ...}`` header line; exact float round trip."""
    records = list(records)
    if not records:
        raise ParameterError("refusing to write an empty record list")
    k = records[0].k
    if any(r.k != k or len(r.g_scores) != k for r in records):
        raise ParameterError("all records must share the same class count")
    lines = [json.dumps({"k": k})] + [r.to_json() for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
