"""Strict JSON run configuration.

Every level of the document is checked against a fixed key set; an unknown
key raises ``ConfigError`` naming its dotted path (``attacks[0].epsilonn``).
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .attacks import AttackConfig
from .detector import METRIC_IDS, DetectorConfig
from .errors import ConfigError, PIDError
from .models import Architecture

ATTACK_KINDS = ("fgsm", "pgd", "random_search", "transfer", "adaptive")
DATASET_KINDS = ("blobs", "rings")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "blobs"
    k: int = 3
    d: int = 8
    n_per_class: int = 200
    separation: float = 4.0
    fractions: tuple[float, float, float] = (0.5, 0.25, 0.25)


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.1
    weight_decay: float = 5e-4
    adversarial: Optional[AttackConfig] = None


@dataclass(frozen=True)
class ModelSpec:
    arch: Architecture
    train: TrainSpec = TrainSpec()


@dataclass(frozen=True)
class AttackSpec:
    name: str
    kind: str
    config: AttackConfig


@dataclass(frozen=True)
class DetectorSpec:
    metrics: tuple[int, ...] = (1,)
    n: int = 3
    target_fpr: float = 0.05

    def detector_config(self, metric_id: int) -> DetectorConfig:
        return DetectorConfig(metric_id, self.n, self.target_fpr)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    dataset: DatasetSpec
    primal: ModelSpec
    auxiliary: ModelSpec
    attacks: tuple[AttackSpec, ...] = ()
    detector: DetectorSpec = DetectorSpec()
    substitute: Optional[ModelSpec] = None
    max_samples: Optional[int] = None
    output_dir: Optional[str] = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def canonical(self) -> dict:
        """Fully defaulted config as plain data, without the output dir."""
        return to_dict(self)

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# --- schema helpers -------------------------------------------------------


def _fields(obj: Any, where: str, allowed: set[str], required: set[str] = frozenset()):
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", where or "<root>")
    for key in obj:
        if key not in allowed:
            raise ConfigError("unknown key", _join(where, key))
    for key in required:
        if key not in obj:
            raise ConfigError("missing required key", _join(where, key))
    return obj


def _join(where: str, key: str) -> str:
    return f"{where}.{key}" if where else key


def _int(value, key, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("expected an integer", key)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}", key)
    return value


def _float(value, key, minimum=None, strict=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a number", key)
    value = float(value)
    if minimum is not None and (value <= minimum if strict else value < minimum):
        raise ConfigError(f"must be {'>' if strict else '>='} {minimum}", key)
    return value


def _bool(value, key):
    if not isinstance(value, bool):
        raise ConfigError("expected true or false", key)
    return value


def _choice(value, key, options):
    if value not in options:
        raise ConfigError(f"expected one of {list(options)}", key)
    return value


def _dataset(obj, where) -> DatasetSpec:
    _fields(obj, where, {"kind", "k", "d", "n_per_class", "separation", "fractions"})
    base = DatasetSpec()
    fractions = obj.get("fractions", list(base.fractions))
    key = _join(where, "fractions")
    if not isinstance(fractions, list) or len(fractions) != 3:
        raise ConfigError("expected [train, calibrate, test]", key)
    fractions = tuple(_float(f, key, 0.0, strict=True) for f in fractions)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("fractions must sum to 1", key)
    return DatasetSpec(
        kind=_choice(obj.get("kind", base.kind), _join(where, "kind"), DATASET_KINDS),
        k=_int(obj.get("k", base.k), _join(where, "k"), 2),
        d=_int(obj.get("d", base.d), _join(where, "d"), 2),
        n_per_class=_int(obj.get("n_per_class", base.n_per_class), _join(where, "n_per_class"), 1),
        separation=_float(obj.get("separation", base.separation), _join(where, "separation"), 0.0, True),
        fractions=fractions,
    )


_ATTACK_PARAM_KEYS = {"epsilon", "step_size", "iterations", "random_init", "lam", "query_budget"}


def _attack_config(obj, where) -> AttackConfig:
    base = AttackConfig()
    params = dict(
        epsilon=_float(obj.get("epsilon", base.epsilon), _join(where, "epsilon"), 0.0),
        step_size=_float(obj.get("step_size", base.step_size), _join(where, "step_size"), 0.0),
        iterations=_int(obj.get("iterations", base.iterations), _join(where, "iterations"), 0),
        random_init=_bool(obj.get("random_init", base.random_init), _join(where, "random_init")),
        lam=_float(obj.get("lam", base.lam), _join(where, "lam"), 0.0),
        query_budget=_int(obj.get("query_budget", base.query_budget), _join(where, "query_budget"), 1),
    )
    try:
        return AttackConfig(**params)
    except PIDError as exc:
        raise ConfigError(str(exc), where) from None


def _model(obj, where) -> ModelSpec:
    _fields(obj, where, {"arch", "train"}, {"arch"})
    arch_where = _join(where, "arch")
    arch = _fields(obj["arch"], arch_where, {"kind", "layer_widths", "activation"},
                   {"kind", "layer_widths"})
    widths = arch["layer_widths"]
    if not isinstance(widths, list):
        raise ConfigError("expected a list of integers", _join(arch_where, "layer_widths"))
    widths = [_int(w, _join(arch_where, "layer_widths"), 1) for w in widths]
    try:
        architecture = Architecture(
            _choice(arch["kind"], _join(arch_where, "kind"), ("linear", "mlp")),
            tuple(widths),
            _choice(arch.get("activation", "relu"), _join(arch_where, "activation"), ("relu", "tanh")),
        )
    except PIDError as exc:
        raise ConfigError(str(exc), arch_where) from None

    tw = _join(where, "train")
    t = _fields(obj.get("train", {}), tw,
                {"epochs", "batch_size", "learning_rate", "weight_decay", "adversarial"})
    base = TrainSpec()
    adversarial = t.get("adversarial")
    if adversarial is not None:
        aw = _join(tw, "adversarial")
        _fields(adversarial, aw, _ATTACK_PARAM_KEYS - {"lam", "query_budget"})
        adversarial = _attack_config(adversarial, aw)
    train = TrainSpec(
        epochs=_int(t.get("epochs", base.epochs), _join(tw, "epochs"), 1),
        batch_size=_int(t.get("batch_size", base.batch_size), _join(tw, "batch_size"), 1),
        learning_rate=_float(t.get("learning_rate", base.learning_rate), _join(tw, "learning_rate"), 0.0, True),
        weight_decay=_float(t.get("weight_decay", base.weight_decay), _join(tw, "weight_decay"), 0.0),
        adversarial=adversarial,
    )
    return ModelSpec(architecture, train)


def _attacks(items, where) -> tuple[AttackSpec, ...]:
    if not isinstance(items, list):
        raise ConfigError("expected a list", where)
    out, names = [], set()
    for i, obj in enumerate(items):
        w = f"{where}[{i}]"
        _fields(obj, w, {"name", "kind"} | _ATTACK_PARAM_KEYS, {"kind"})
        kind = _choice(obj["kind"], _join(w, "kind"), ATTACK_KINDS)
        name = obj.get("name", kind)
        if not isinstance(name, str) or not name or "/" in name:
            raise ConfigError("name must be a non-empty string without '/'", _join(w, "name"))
        if name in names:
            raise ConfigError(f"duplicate attack name {name!r}", _join(w, "name"))
        names.add(name)
        out.append(AttackSpec(name, kind, _attack_config(obj, w)))
    return tuple(out)


def _detector(obj, where) -> DetectorSpec:
    _fields(obj, where, {"metrics", "n", "target_fpr"})
    base = DetectorSpec()
    metrics = obj.get("metrics", list(base.metrics))
    key = _join(where, "metrics")
    if not isinstance(metrics, list) or not metrics:
        raise ConfigError("expected a non-empty list of metric ids", key)
    metrics = tuple(_choice(m, key, METRIC_IDS) for m in metrics)
    if len(set(metrics)) != len(metrics):
        raise ConfigError("duplicate metric id", key)
    n = _int(obj.get("n", base.n), _join(where, "n"), 1)
    fpr = _float(obj.get("target_fpr", base.target_fpr), _join(where, "target_fpr"), 0.0, True)
    if fpr >= 1.0:
        raise ConfigError("must be < 1", _join(where, "target_fpr"))
    return DetectorSpec(metrics, n, fpr)


TOP_KEYS = {"seed", "dataset", "primal", "auxiliary", "substitute", "attacks",
            "detector", "max_samples", "output_dir"}


def config_from_dict(obj: dict) -> RunConfig:
    _fields(obj, "", TOP_KEYS, {"seed", "dataset", "primal", "auxiliary"})
    seed = _int(obj["seed"], "seed", 0)
    dataset = _dataset(obj["dataset"], "dataset")
    primal = _model(obj["primal"], "primal")
    auxiliary = _model(obj["auxiliary"], "auxiliary")
    substitute = _model(obj["substitute"], "substitute") if obj.get("substitute") else None
    attacks = _attacks(obj.get("attacks", []), "attacks")
    detector = _detector(obj.get("detector", {}), "detector")
    max_samples = obj.get("max_samples")
    if max_samples is not None:
        max_samples = _int(max_samples, "max_samples", 1)
    output_dir = obj.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("expected a string", "output_dir")

    for role, spec in (("primal", primal), ("auxiliary", auxiliary), ("substitute", substitute)):
        if spec is None:
            continue
        if spec.arch.d != dataset.d or spec.arch.k != dataset.k:
            raise ConfigError(
                f"layer widths must start at d={dataset.d} and end at k={dataset.k}",
                f"{role}.arch.layer_widths",
            )
    if any(a.kind == "transfer" for a in attacks) and substitute is None:
        raise ConfigError("transfer attacks need a substitute model", "substitute")
    if 3 in detector.metrics and detector.n > dataset.k:
        raise ConfigError(f"n must be <= k={dataset.k}", "detector.n")
    return RunConfig(seed, dataset, primal, auxiliary, attacks, detector, substitute,
                     max_samples, output_dir, raw=copy.deepcopy(obj))


def apply_overrides(obj: dict, assignments: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible.

    List elements are addressed as ``attacks.0.epsilon`` or ``attacks[0].epsilon``.
    """
    obj = copy.deepcopy(obj)
    for item in assignments:
        if "=" not in item:
            raise ConfigError("override must look like key.path=value", item)
        path, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = obj
        parts = re.sub(r"\[(\d+)\]", r".\1", path).split(".")
        try:
            for part in parts[:-1]:
                if isinstance(node, list):
                    node = node[int(part)]
                else:
                    node = node.setdefault(part, {})
            if isinstance(node, list):
                node[int(parts[-1])] = value
            elif isinstance(node, dict):
                node[parts[-1]] = value
            else:
                raise TypeError
        except (ValueError, IndexError, TypeError, AttributeError):
            raise ConfigError("override path does not exist", path) from None
    return obj


def load_config_dict(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno})") from None


def parse_config(path, overrides: list[str] | None = None) -> RunConfig:
    return config_from_dict(apply_overrides(load_config_dict(path), overrides or []))


# --- canonical form -------------------------------------------------------


def _attack_dict(cfg: AttackConfig, keys) -> dict:
    return {key: getattr(cfg, key) for key in sorted(keys)}


def _model_dict(spec: ModelSpec) -> dict:
    t = spec.train
    return {
        "arch": spec.arch.to_dict(),
        "train": {
            "epochs": t.epochs,
            "batch_size": t.batch_size,
            "learning_rate": t.learning_rate,
            "weight_decay": t.weight_decay,
            "adversarial": None if t.adversarial is None else _attack_dict(
                t.adversarial, _ATTACK_PARAM_KEYS - {"lam", "query_budget"}),
        },
    }


def to_dict(cfg: RunConfig) -> dict:
    ds = cfg.dataset
    return {
        "seed": cfg.seed,
        "dataset": {"kind": ds.kind, "k": ds.k, "d": ds.d, "n_per_class": ds.n_per_class,
                    "separation": ds.separation, "fractions": list(ds.fractions)},
        "primal": _model_dict(cfg.primal),
        "auxiliary": _model_dict(cfg.auxiliary),
        "substitute": None if cfg.substitute is None else _model_dict(cfg.substitute),
        "attacks": [{"name": a.name, "kind": a.kind, **_attack_dict(a.config, _ATTACK_PARAM_KEYS)}
                    for a in cfg.attacks],
        "detector": {"metrics": list(cfg.detector.metrics), "n": cfg.detector.n,
                     "target_fpr": cfg.detector.target_fpr},
        "max_samples": cfg.max_samples,
    }
