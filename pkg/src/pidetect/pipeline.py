"""Write a study's artifacts to disk and check the reference gates."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .attacks import write_adversarial_pairs
from .benchmark import DetectionReport, Study, build_data, build_models, run_study
from .config import RunConfig, parse_config
from .datasets import write_prediction_records
from .errors import PIDError, StageError
from .models import save_model

log = logging.getLogger(__name__)

SENTINEL = "_INCOMPLETE"
STAGES = ("train", "attack", "report")


def report_stem(cfg: RunConfig) -> str:
    return f"report_{cfg.digest()}_seed{cfg.seed}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _write_models(out: Path, models) -> None:
    (out / "models").mkdir(parents=True, exist_ok=True)
    for role, m in models.items():
        save_model(m, out / "models" / f"{role}.json")


def _write_study(out: Path, study: Study) -> None:
    cfg = study.config
    (out / "adversarial").mkdir(exist_ok=True)
    (out / "records").mkdir(exist_ok=True)
    for name, pairs in study.pairs.items():
        write_adversarial_pairs(out / "adversarial" / f"{name}.jsonl",
                                [p for _, p in pairs], [i for i, _ in pairs])
    for name, records in study.records.items():
        write_prediction_records(out / "records" / f"{name}.jsonl", records)
    write_prediction_records(out / "records" / "calibration.jsonl", study.calibration_records)
    _write_json(out / "calibration.json", {
        "target_fpr": cfg.detector.target_fpr,
        "n": cfg.detector.n,
        "n_calibration": len(study.calibration_records),
        "thresholds": {str(k): v for k, v in study.thresholds.items()},
    })


def run_pipeline(cfg: RunConfig, out_dir, stop_after: str = "report") -> Study | None:
    """Run the study and write its artifacts under ``out_dir``.

    A ``_INCOMPLETE`` sentinel naming the current stage exists for the whole
    run and is removed only on success.
    """
    if stop_after not in STAGES:
        raise ValueError(f"stop_after must be one of {STAGES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sentinel = out / SENTINEL
    sentinel.write_text("stage: setup\n", encoding="utf-8")
    _write_json(out / "config.resolved.json", cfg.canonical())

    study = None
    try:
        if stop_after == "train":
            sentinel.write_text("stage: train\n", encoding="utf-8")
            train_set, _, _ = build_data(cfg)
            _write_models(out, build_models(cfg, train_set))
        else:
            sentinel.write_text("stage: study\n", encoding="utf-8")
            study = run_study(cfg)
            sentinel.write_text("stage: write\n", encoding="utf-8")
            _write_models(out, study.models)
            _write_study(out, study)
            if stop_after == "report":
                stem = report_stem(cfg)
                (out / f"{stem}.json").write_text(study.report.to_json(), encoding="utf-8")
                (out / f"{stem}.txt").write_text(study.report.to_text(), encoding="utf-8")
    except StageError as exc:
        sentinel.write_text(f"stage: {exc.stage}\nerror: {exc}\n", encoding="utf-8")
        raise
    except (PIDError, OSError) as exc:
        sentinel.write_text(f"stage: write\nerror: {exc}\n", encoding="utf-8")
        raise StageError("write", exc) from exc
    sentinel.unlink()
    return study


# --- reference study ------------------------------------------------------

REFERENCE_CONFIGS = {"nat": "reference_nat.json", "adv": "reference_adv.json"}


def reference_config_path(name: str) -> Path:
    return Path(str(resources.files("pidetect") / "configs" / REFERENCE_CONFIGS[name]))


def load_reference(name: str, overrides=None) -> RunConfig:
    return parse_config(reference_config_path(name), overrides)


@dataclass
class Gate:
    name: str
    value: float
    bound: str
    passed: bool

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.value:.4f} ({self.bound})"


def reference_gates(nat: DetectionReport, adv: DetectionReport) -> list[Gate]:
    """Directional checks on the reference study (natural and adversarial primal)."""
    nat_pgd = nat.row("pgd", 1).auc
    adv_pgd = adv.row("pgd", 1).auc
    drop = nat_pgd - nat.row("adaptive", 1).auc
    m3, m4 = adv.row("pgd", 3).auc, adv.row("pgd", 4).auc
    return [
        Gate("natural primal, PGD, metric 1 AUC", nat_pgd, ">= 0.90", nat_pgd >= 0.90),
        Gate("adversarial primal, PGD, metric 1 AUC", adv_pgd, ">= 0.90", adv_pgd >= 0.90),
        Gate("natural primal, AUC drop PGD -> adaptive", drop, ">= 0.05", drop >= 0.05),
        Gate("adversarial primal, metric 1 - metric 3 AUC", adv_pgd - m3, ">= 0", adv_pgd >= m3),
        Gate("adversarial primal, metric 1 - metric 4 AUC", adv_pgd - m4, ">= 0", adv_pgd >= m4),
    ]


def reproduce(out_dir) -> tuple[dict[str, Study], list[Gate]]:
    out = Path(out_dir)
    studies = {}
    for name in REFERENCE_CONFIGS:
        studies[name] = run_pipeline(load_reference(name), out / name)
    return studies, reference_gates(studies["nat"].report, studies["adv"].report)
