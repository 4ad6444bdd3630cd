"""Small differentiable classifiers with hand-written backpropagation.

Layers compute ``a @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``.  All
routines accept one input of shape ``(d,)`` or a batch ``(n, d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .datasets import Dataset
from .errors import NumericError, ParameterError, ValidationError
from .seeding import stream

MODEL_FORMAT = "pid-model/1"
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class Architecture:
    kind: str
    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        widths = self.layer_widths
        if self.kind not in ("linear", "mlp"):
            raise ParameterError(f"unknown architecture kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if self.kind == "linear" and len(widths) != 2:
            raise ParameterError("linear architecture takes widths (d, k)")
        if self.kind == "mlp" and len(widths) < 3:
            raise ParameterError("mlp needs at least one hidden layer")
        if any(w < 1 for w in widths) or widths[0] < 1 or widths[-1] < 2:
            raise ParameterError("widths must be positive and k >= 2")

    @property
    def d(self) -> int:
        return self.layer_widths[0]

    @property
    def k(self) -> int:
        return self.layer_widths[-1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "layer_widths": list(self.layer_widths),
                "activation": self.activation}


@dataclass
class Model:
    arch: Architecture
    weights: list[tuple[np.ndarray, np.ndarray]]
    training_mode: str = "natural"
    seed: int = 0

    def __post_init__(self):
        widths = self.arch.layer_widths
        if len(self.weights) != len(widths) - 1:
            raise ValidationError("one (W, b) pair per layer expected")
        for (W, b), fan_in, fan_out in zip(self.weights, widths[:-1], widths[1:]):
            if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValidationError(
                    f"layer shapes {W.shape}/{b.shape} != ({fan_in}, {fan_out})"
                )

    @property
    def d(self) -> int:
        return self.arch.d

    @property
    def k(self) -> int:
        return self.arch.k

    def weight_bytes(self) -> bytes:
        return b"".join(W.tobytes() + b.tobytes() for W, b in self.weights)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.1
    weight_decay: float = 5e-4
    seed: int = 0
    adversarial: Optional["AttackConfig"] = None  # noqa: F821

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be non-negative")


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ParameterError("softmax needs k >= 2 logits")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logit")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_sum_exp(z: np.ndarray) -> np.ndarray:
    top = z.max(axis=-1, keepdims=True)
    return (top + np.log(np.exp(z - top).sum(axis=-1, keepdims=True)))[..., 0]


def _activate(z, activation):
    return np.maximum(z, 0.0) if activation == "relu" else np.tanh(z)


def _activate_grad(z, a, activation):
    return (z > 0.0).astype(np.float64) if activation == "relu" else 1.0 - a * a


def _as_batch(m: Model, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != m.d:
        raise ParameterError(f"input dimension {X.shape[-1]} != model dimension {m.d}")
    return X, single


def _forward_trace(m: Model, X: np.ndarray):
    """Return (pre-activations, activations); activations[0] is the input."""
    zs, acts = [], [X]
    a = X
    last = len(m.weights) - 1
    for i, (W, b) in enumerate(m.weights):
        z = a @ W + b
        zs.append(z)
        a = z if i == last else _activate(z, m.arch.activation)
        acts.append(a)
    return zs, acts


def logits(m: Model, x) -> np.ndarray:
    X, single = _as_batch(m, x)
    z = _forward_trace(m, X)[0][-1]
    return z[0] if single else z


def forward(m: Model, x) -> np.ndarray:
    """Class probabilities for one input or a batch."""
    return softmax(logits(m, x))


def predict(m: Model, x):
    labels = np.argmax(logits(m, x), axis=-1)
    return int(labels) if np.ndim(labels) == 0 else labels


def _labels(m: Model, label, n: int) -> np.ndarray:
    y = np.broadcast_to(np.asarray(label, dtype=np.int64), (n,))
    if np.any(y < 0) or np.any(y >= m.k):
        raise ParameterError(f"label outside [0, {m.k})")
    return y


def cross_entropy(m: Model, x, label) -> np.ndarray:
    """Per-sample CE computed from logits via log-sum-exp."""
    X, single = _as_batch(m, x)
    z = _forward_trace(m, X)[0][-1]
    y = _labels(m, label, len(X))
    ce = log_sum_exp(z) - z[np.arange(len(X)), y]
    return float(ce[0]) if single else ce


def _backward(m: Model, zs, acts, dz):
    """Propagate dL/dlogits back; yields parameter grads and the input grad."""
    grads = [None] * len(m.weights)
    for i in range(len(m.weights) - 1, -1, -1):
        W, _ = m.weights[i]
        grads[i] = (acts[i].T @ dz, dz.sum(axis=0))
        da = dz @ W.T
        if i > 0:
            dz = da * _activate_grad(zs[i - 1], acts[i], m.arch.activation)
    return grads, da


def input_gradient(m: Model, x, loss_label, sign: str = "maximize") -> np.ndarray:
    """Gradient of CE(forward(m, x), loss_label) with respect to ``x``.

    ``sign="minimize"`` returns the negated gradient, i.e. the ascent
    direction for a targeted attack that pulls toward ``loss_label``.
    For a batch the result holds per-sample gradients (no averaging).
    """
    if sign not in ("maximize", "minimize"):
        raise ParameterError("sign must be 'maximize' or 'minimize'")
    X, single = _as_batch(m, x)
    y = _labels(m, loss_label, len(X))
    zs, acts = _forward_trace(m, X)
    dz = softmax(zs[-1])
    dz[np.arange(len(X)), y] -= 1.0
    _, grad = _backward(m, zs, acts, dz)
    if sign == "minimize":
        grad = -grad
    return grad[0] if single else grad


def init_model(arch: Architecture, seed: int, training_mode: str = "natural") -> Model:
    rng = stream(seed, "train/init")
    weights = []
    for fan_in, fan_out in zip(arch.layer_widths[:-1], arch.layer_widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, (fan_in, fan_out))
        b = rng.uniform(-bound, bound, fan_out)
        weights.append((W, b))
    return Model(arch, weights, training_mode, seed)


def train(arch: Architecture, train_set: Dataset, cfg: TrainConfig) -> Model:
    """Mini-batch SGD with L2 weight decay on mean cross-entropy.

    With ``cfg.adversarial`` set, every batch is first replaced by PGD
    examples crafted against the current weights.
    """
    if len(train_set) == 0:
        raise ParameterError("cannot train on an empty dataset")
    if train_set.d != arch.d or train_set.k != arch.k:
        raise ParameterError(
            f"dataset (d={train_set.d}, k={train_set.k}) does not fit "
            f"architecture (d={arch.d}, k={arch.k})"
        )
    mode = "adversarial" if cfg.adversarial is not None else "natural"
    m = init_model(arch, cfg.seed, mode)
    shuffle_rng = stream(cfg.seed, "train/shuffle")
    adv_rng = stream(cfg.seed, "train/adv")
    if cfg.adversarial is not None:
        from .attacks import pgd_batch

    X_all, y_all = train_set.X, train_set.y
    n = len(train_set)
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            X, y = X_all[idx], y_all[idx]
            if cfg.adversarial is not None:
                X = pgd_batch(m, X, y, cfg.adversarial, rng=adv_rng)
            zs, acts = _forward_trace(m, X)
            dz = softmax(zs[-1])
            dz[np.arange(len(X)), y] -= 1.0
            dz /= len(X)
            grads, _ = _backward(m, zs, acts, dz)
            for (W, b), (gW, gb) in zip(m.weights, grads):
                W -= cfg.learning_rate * (gW + cfg.weight_decay * W)
                b -= cfg.learning_rate * gb
        if not all(np.all(np.isfinite(W)) for W, _ in m.weights):
            raise NumericError("training diverged (non-finite weights)")
    return m


def evaluate_accuracy(m: Model, ds: Dataset) -> float:
    if len(ds) == 0:
        raise ParameterError("empty dataset")
    return float(np.mean(predict(m, ds.X) == ds.y))


def finite_diff_check(
    m: Model,
    x,
    label: int,
    h: float = 1e-5,
    tol: float = 1e-4,
    analytic: np.ndarray | None = None,
) -> GradCheckReport:
    """Compare the analytic input gradient with central differences.

    Relative error per coordinate is ``|a - b| / max(|a|, |b|, 1e-8)``.
    ``analytic`` overrides the gradient under test (negative controls).
    """
    if not h > 0 or not tol > 0:
        raise ParameterError("h and tol must be positive")
    x = np.asarray(x, dtype=np.float64)
    if analytic is None:
        analytic = input_gradient(m, x, label)
    steps = h * np.eye(len(x))
    numeric = (
        cross_entropy(m, x + steps, label) - cross_entropy(m, x - steps, label)
    ) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = float(np.max(np.abs(analytic - numeric) / denom))
    return GradCheckReport(rel, rel <= tol, np.asarray(analytic), numeric)


def model_to_dict(m: Model) -> dict:
    return {
        "version": MODEL_FORMAT,
        "arch": m.arch.to_dict(),
        "seed": m.seed,
        "training_mode": m.training_mode,
        "weights": [{"W": W.tolist(), "b": b.tolist()} for W, b in m.weights],
    }


def save_model(m: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> Model:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("version") != MODEL_FORMAT:
        raise ValidationError(f"unsupported model format {obj.get('version')!r}")
    arch = Architecture(**obj["arch"])
    weights = [
        (np.array(layer["W"], dtype=np.float64).reshape(fi, fo),
         np.array(layer["b"], dtype=np.float64))
        for layer, fi, fo in zip(obj["weights"], arch.layer_widths[:-1], arch.layer_widths[1:])
    ]
    return Model(arch, weights, obj["training_mode"], obj["seed"])
