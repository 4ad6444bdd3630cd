"""Command-line entry point.

    pidetect train     --config run.json     # fit primal/auxiliary(/substitute) models
    pidetect attack    --config run.json     # ... plus adversarial pairs and records
    pidetect evaluate  --config run.json     # full study + detection report
    pidetect detect    --records preds.jsonl # score an external record file
    pidetect reproduce [--out-dir DIR]       # bundled reference study with gates

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 failed gate.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .benchmark import score_records
from .config import config_from_dict, load_config_dict, apply_overrides
from .datasets import load_prediction_records
from .detector import ADVERSARIAL, calibrate_threshold, decide
from .errors import ConfigError, PIDError
from .evaluation import auc
from .pipeline import reproduce, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_GATE = 0, 1, 2, 3
DEFAULT_OUT_DIR = "pid-output"

log = logging.getLogger("pidetect")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out-dir", help="output directory (else config output_dir, else $PID_OUT_DIR)")
    p.add_argument("--seed", type=int, help="override the global seed")
    p.add_argument("--metrics", help="comma-separated metric ids, e.g. 1,3")
    p.add_argument("--n", type=int, help="top-n for metric 3")
    p.add_argument("--target-fpr", type=float, help="calibration false-positive rate")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. dataset.separation=5")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pidetect", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train the models named in a config"),
        ("attack", "train models and craft adversarial examples"),
        ("evaluate", "run the full detection study"),
    ):
        _add_run_flags(sub.add_parser(name, help=help_text))

    det = sub.add_parser("detect", help="score a prediction-record file")
    det.add_argument("--records", required=True)
    det.add_argument("--metric", type=int, default=1, choices=(1, 2, 3, 4))
    det.add_argument("--n", type=int, default=3)
    group = det.add_mutually_exclusive_group()
    group.add_argument("--threshold", type=float)
    group.add_argument("--calibration-records",
                       help="clean records to calibrate on (default: clean records in --records)")
    det.add_argument("--target-fpr", type=float, default=0.05)
    det.add_argument("--output", help="write per-record decisions here (JSON lines)")

    rep = sub.add_parser("reproduce", help="run the bundled reference study")
    rep.add_argument("--out-dir")
    return parser


def _overrides(args) -> list[str]:
    out = list(args.set)
    if args.seed is not None:
        out.append(f"seed={args.seed}")
    if args.metrics:
        out.append("detector.metrics=" + json.dumps([int(m) for m in args.metrics.split(",")]))
    if args.n is not None:
        out.append(f"detector.n={args.n}")
    if args.target_fpr is not None:
        out.append(f"detector.target_fpr={args.target_fpr!r}")
    return out


def _out_dir(flag, cfg_value) -> Path:
    return Path(flag or cfg_value or os.environ.get("PID_OUT_DIR") or DEFAULT_OUT_DIR)


def _cmd_run(args) -> int:
    try:
        cfg = config_from_dict(apply_overrides(load_config_dict(args.config), _overrides(args)))
    except ValueError as exc:
        if not isinstance(exc, ConfigError):
            exc = ConfigError(str(exc))
        raise exc
    out = _out_dir(args.out_dir, cfg.output_dir)
    stop = {"train": "train", "attack": "attack", "evaluate": "report"}[args.command]
    study = run_pipeline(cfg, out, stop_after=stop)
    if study is not None and stop == "report":
        sys.stdout.write(study.report.to_text())
    print(f"artifacts written to {out}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    records = load_prediction_records(args.records)
    if not records:
        raise PIDError(f"{args.records} holds no records")
    scores = score_records(records, args.metric, args.n)
    if args.threshold is not None:
        threshold = args.threshold
    else:
        source = load_prediction_records(args.calibration_records) if args.calibration_records else records
        clean = [r for r in source if not r.is_adversarial]
        if not clean:
            raise PIDError("no clean records to calibrate the threshold on")
        threshold = calibrate_threshold(score_records(clean, args.metric, args.n), args.target_fpr)
    decisions = [decide(float(s), threshold) for s in scores]
    lines = [
        json.dumps({"id": r.id, "score": float(s), "decision": d})
        for r, s, d in zip(records, scores, decisions)
    ]
    if args.output:
        Path(args.output).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    else:
        for line in lines:
            print(line)
    is_adv = np.array([r.is_adversarial for r in records])
    summary = {"metric": args.metric, "threshold": threshold, "n_records": len(records),
               "n_flagged": sum(d == ADVERSARIAL for d in decisions)}
    if is_adv.any() and (~is_adv).any():
        summary["auc"] = auc(scores[is_adv], scores[~is_adv])
    print(json.dumps({"summary": summary}))
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    out = _out_dir(args.out_dir, None)
    studies, gates = reproduce(out)
    for name, study in studies.items():
        print(f"== reference study: {name} primal ==")
        sys.stdout.write(study.report.to_text())
    for gate in gates:
        print(gate.line())
    return EXIT_OK if all(g.passed for g in gates) else EXIT_GATE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"detect": _cmd_detect, "reproduce": _cmd_reproduce}
    try:
        return handlers.get(args.command, _cmd_run)(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if args.command != "detect" else EXIT_RUNTIME
    except (PIDError, OSError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
