"""End-to-end detection study: data -> models -> attacks -> scores -> report.

Only test samples that the primal model classifies correctly are attacked, and
only adversarial inputs that actually flip the primal prediction are scored.
Clean scores come from the same attacked pool; the detection threshold is
calibrated on the separate calibration split.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attacks import (
    AdversarialPair,
    adaptive_joint_attack,
    attack_success_rate,
    fgsm,
    pgd,
    random_search_attack,
    second_choice_targets,
)
from .config import AttackSpec, ModelSpec, RunConfig
from .datasets import Dataset, PredictionRecord, gen_synthetic, make_record, split
from .detector import calibrate_threshold, flag_rate, inconsistency
from .errors import ParameterError, PIDError, StageError
from .evaluation import auc
from .models import Model, TrainConfig, evaluate_accuracy, forward, train
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass
class ReportRow:
    attack_name: str
    epsilon: float
    metric_id: int
    auc: float
    asr: float
    threshold: float
    empirical_fpr: float
    tpr_at_threshold: float
    n_adv: int
    n_clean: int


@dataclass
class DetectionReport:
    rows: list[ReportRow]
    seed: int
    config_digest: str
    accuracy: dict[str, float] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "skipped": self.skipped,
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def row(self, attack_name: str, metric_id: int) -> ReportRow:
        for r in self.rows:
            if r.attack_name == attack_name and r.metric_id == metric_id:
                return r
        raise KeyError((attack_name, metric_id))

    def to_text(self) -> str:
        header = ("attack", "eps", "metric", "AUC%", "ASR%", "thresh", "FPR%", "TPR%", "n_adv", "n_clean")
        body = [
            (r.attack_name, f"{r.epsilon:.4f}", str(r.metric_id), f"{100 * r.auc:.2f}",
             f"{100 * r.asr:.2f}", f"{r.threshold:.4f}", f"{100 * r.empirical_fpr:.2f}",
             f"{100 * r.tpr_at_threshold:.2f}", str(r.n_adv), str(r.n_clean))
            for r in self.rows
        ]
        widths = [max(len(x) for x in col) for col in zip(header, *body)]
        fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))  # noqa: E731
        lines = [f"PID detection report  seed={self.seed}  config={self.config_digest}"]
        lines += [f"accuracy[{k}] = {100 * v:.2f}%" for k, v in sorted(self.accuracy.items())]
        lines += [fmt(header), fmt(["-" * w for w in widths])]
        lines += [fmt(b) for b in body]
        lines += [f"skipped (no successful AEs): {name}" for name in self.skipped]
        return "\n".join(lines) + "\n"


@dataclass
class Study:
    """Everything a run produces; ``report`` is the summary."""

    config: RunConfig
    splits: tuple[Dataset, Dataset, Dataset]
    models: dict[str, Model]
    pairs: dict[str, list[tuple[str, AdversarialPair]]]
    records: dict[str, list[PredictionRecord]]
    calibration_records: list[PredictionRecord]
    thresholds: dict[int, float]
    report: DetectionReport


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except (PIDError, ArithmeticError, ValueError) as exc:
                raise StageError(name, exc) from exc

        return inner

    return wrap


def score_records(records, metric_id: int, n: int = 3) -> np.ndarray:
    f = np.array([r.f_scores for r in records], dtype=np.float64)
    g = np.array([r.g_scores for r in records], dtype=np.float64)
    return np.asarray(inconsistency(metric_id, f, g, n))


def split_scores(records, metric_id: int, n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """(adversarial scores, clean scores) of a record list."""
    scores = score_records(records, metric_id, n)
    is_adv = np.array([r.is_adversarial for r in records], dtype=bool)
    return scores[is_adv], scores[~is_adv]


@_stage("data")
def build_data(cfg: RunConfig):
    ds = cfg.dataset
    full = gen_synthetic(ds.kind, ds.k, ds.d, ds.n_per_class, ds.separation,
                         derive_seed(cfg.seed, "data/gen"))
    return split(full, ds.fractions, derive_seed(cfg.seed, "data/split"))


def train_role(spec: ModelSpec, train_set: Dataset, seed: int, role: str) -> Model:
    t = spec.train
    tc = TrainConfig(t.epochs, t.batch_size, t.learning_rate, t.weight_decay,
                     derive_seed(seed, "train", role), t.adversarial)
    return train(spec.arch, train_set, tc)


@_stage("train")
def build_models(cfg: RunConfig, train_set: Dataset) -> dict[str, Model]:
    roles = {"primal": cfg.primal, "auxiliary": cfg.auxiliary}
    if cfg.substitute is not None:
        roles["substitute"] = cfg.substitute
    models = {}
    for role, spec in roles.items():
        log.info("training %s (%s %s)", role, spec.arch.kind, spec.arch.layer_widths)
        models[role] = train_role(spec, train_set, cfg.seed, role)
    return models


def attack_one(spec: AttackSpec, models: dict[str, Model], x, y: int, seed: int) -> AdversarialPair:
    cfg = replace(spec.config, seed=seed)
    f = models["primal"]
    if spec.kind == "fgsm":
        return fgsm(f, x, y, cfg.epsilon)
    if spec.kind == "pgd":
        return pgd(f, x, y, cfg)
    if spec.kind == "random_search":
        return random_search_attack(f, x, y, cfg)
    if spec.kind == "transfer":
        crafted = pgd(models["substitute"], x, y, cfg)
        fooled = int(np.argmax(forward(f, crafted.x_adv))) != y
        return AdversarialPair(crafted.x_clean, crafted.x_adv, y, fooled)
    if spec.kind == "adaptive":
        t = int(second_choice_targets(f, x)[0])
        return adaptive_joint_attack(f, models["auxiliary"], x, y, t, cfg)
    raise ParameterError(f"unknown attack kind {spec.kind!r}")


def run_study(cfg: RunConfig) -> Study:
    train_set, cal_set, test_set = build_data(cfg)
    models = build_models(cfg, train_set)
    f, g = models["primal"], models["auxiliary"]
    accuracy = {role: evaluate_accuracy(m, test_set) for role, m in models.items()}

    cal_records = _score_clean(f, g, cal_set, "cal")
    metrics, n = cfg.detector.metrics, cfg.detector.n
    thresholds = {
        mid: calibrate_threshold(score_records(cal_records, mid, n), cfg.detector.target_fpr)
        for mid in metrics
    }

    correct = np.flatnonzero(np.argmax(forward(f, test_set.X), axis=-1) == test_set.y)
    if cfg.max_samples is not None:
        correct = correct[: cfg.max_samples]
    if correct.size == 0:
        raise StageError("attack", ParameterError("primal classifies no test sample correctly"))
    clean_records = [
        make_record(f"s{i}/clean", test_set.y[i], forward(f, test_set.X[i]), forward(g, test_set.X[i]), False)
        for i in correct
    ]

    pairs, records, rows, skipped = {}, {}, [], []
    for spec in cfg.attacks:
        pairs[spec.name], records[spec.name] = _run_attack(cfg, spec, models, test_set, correct, clean_records)
        attack_pairs = [p for _, p in pairs[spec.name]]
        asr = attack_success_rate(f, attack_pairs)
        adv_n = sum(r.is_adversarial for r in records[spec.name])
        log.info("attack %s: ASR %.3f, %d successful AEs", spec.name, asr, adv_n)
        if adv_n == 0:
            skipped.append(spec.name)
            continue
        for mid in metrics:
            adv_s, clean_s = split_scores(records[spec.name], mid, n)
            thr = thresholds[mid]
            rows.append(ReportRow(
                spec.name, spec.config.epsilon, mid, auc(adv_s, clean_s), asr, thr,
                flag_rate(clean_s, thr), flag_rate(adv_s, thr), int(adv_s.size), int(clean_s.size),
            ))

    report = DetectionReport(rows, cfg.seed, cfg.digest(), accuracy, skipped)
    return Study(cfg, (train_set, cal_set, test_set), models, pairs, records, cal_records,
                 thresholds, report)


def _score_clean(f, g, ds: Dataset, prefix: str) -> list[PredictionRecord]:
    F, G = forward(f, ds.X), forward(g, ds.X)
    return [make_record(f"{prefix}{i}", ds.y[i], F[i], G[i], False) for i in range(len(ds))]


@_stage("attack")
def _run_attack(cfg, spec, models, test_set, correct, clean_records):
    f, g = models["primal"], models["auxiliary"]
    pairs, adv_records = [], []
    for i in correct:
        x, y = test_set.X[i], int(test_set.y[i])
        seed = derive_seed(cfg.seed, "attack/init", spec.name, int(i))
        pair = attack_one(spec, models, x, y, seed)
        pairs.append((f"s{i}", pair))
        f_p = forward(f, pair.x_adv)
        if int(np.argmax(f_p)) != y:
            adv_records.append(make_record(f"s{i}/{spec.name}", y, f_p, forward(g, pair.x_adv), True))
    return pairs, clean_records + adv_records


def benchmark_run(cfg: RunConfig) -> DetectionReport:
    """Run the full study and return only its report."""
    return run_study(cfg).report
