import json
import os

import pytest

from pidetect import benchmark, cli
from pidetect.benchmark import split_scores
from pidetect.config import apply_overrides, config_from_dict, parse_config
from pidetect.datasets import load_prediction_records
from pidetect.errors import ConfigError, NumericError, StageError
from pidetect.evaluation import auc
from pidetect.pipeline import SENTINEL, reference_config_path, report_stem, run_pipeline

MINIMAL = {
    "seed": 0,
    "dataset": {},
    "primal": {"arch": {"kind": "mlp", "layer_widths": [8, 16, 3]}},
    "auxiliary": {"arch": {"kind": "linear", "layer_widths": [8, 3]}},
}


# --- parsing ---------------------------------------------------------------------------


def test_minimal_config_gets_defaults():
    cfg = config_from_dict(MINIMAL)
    assert cfg.detector.metrics == (1,) and cfg.detector.n == 3 and cfg.detector.target_fpr == 0.05
    assert cfg.dataset.kind == "blobs" and cfg.dataset.k == 3 and cfg.dataset.d == 8
    assert cfg.primal.train.epochs == 50 and cfg.primal.train.adversarial is None
    assert cfg.attacks == () and cfg.substitute is None


@pytest.mark.parametrize(
    "mutate,key",
    [
        (lambda c: c["attacks"].append({"kind": "pgd", "epsilonn": 0.1}), "attacks[0].epsilonn"),
        (lambda c: c.pop("seed"), "seed"),
        (lambda c: c.update(colour="red"), "colour"),
        (lambda c: c["dataset"].update(k=1), "dataset.k"),
        (lambda c: c["attacks"].append({"kind": "pgd", "epsilon": -0.1}), "attacks[0].epsilon"),
        (lambda c: c["attacks"].append({"kind": "transfer"}), "substitute"),
        (lambda c: c["attacks"].append({"kind": "laser"}), "attacks[0].kind"),
        (lambda c: c["primal"]["arch"].update(layer_widths=[5, 16, 3]), "primal.arch.layer_widths"),
        (lambda c: c.update(detector={"metrics": [3], "n": 4}), "detector.n"),
        (lambda c: c.update(detector={"target_fpr": 1.5}), "detector.target_fpr"),
        (lambda c: c.update(seed="1"), "seed"),
    ],
)
def test_schema_violations_name_the_key(mutate, key):
    obj = json.loads(json.dumps(MINIMAL))
    obj.setdefault("attacks", [])
    mutate(obj)
    with pytest.raises(ConfigError) as info:
        config_from_dict(obj)
    assert info.value.key == key
    assert key in str(info.value)


def test_duplicate_attack_names_rejected():
    obj = dict(MINIMAL, attacks=[{"kind": "pgd"}, {"kind": "pgd"}])
    with pytest.raises(ConfigError):
        config_from_dict(obj)


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_config(tmp_path / "nope.json")


def test_parse_config_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_config(path)


def test_overrides():
    obj = dict(MINIMAL, attacks=[{"kind": "pgd"}])
    out = apply_overrides(obj, ["seed=5", "dataset.separation=2.5", "attacks[0].epsilon=0.2",
                                "attacks.0.iterations=3", "detector.metrics=[1,4]"])
    cfg = config_from_dict(out)
    assert cfg.seed == 5 and cfg.dataset.separation == 2.5
    assert cfg.attacks[0].config.epsilon == 0.2 and cfg.attacks[0].config.iterations == 3
    assert cfg.detector.metrics == (1, 4)
    assert obj["attacks"][0] == {"kind": "pgd"}  # input untouched
    with pytest.raises(ConfigError):
        apply_overrides(obj, ["seed"])
    with pytest.raises(ConfigError):
        apply_overrides(obj, ["attacks.4.epsilon=1"])


def test_digest_ignores_output_dir_and_tracks_content():
    a = config_from_dict(MINIMAL)
    b = config_from_dict(dict(MINIMAL, output_dir="/tmp/x"))
    c = config_from_dict(dict(MINIMAL, seed=1))
    assert a.digest() == b.digest() != c.digest()
    assert len(a.digest()) == 16


def test_reference_configs_parse():
    for name in ("nat", "adv"):
        cfg = parse_config(reference_config_path(name))
        assert cfg.dataset.k == 3 and cfg.dataset.d == 8
        assert (cfg.primal.train.adversarial is not None) == (name == "adv")


# --- pipeline --------------------------------------------------------------------------------


def test_run_pipeline_artifacts_and_determinism(tmp_path, small_config):
    cfg = config_from_dict(small_config)
    out = tmp_path / "out"
    run_pipeline(cfg, out)
    files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())
    stem = report_stem(cfg)
    assert f"{stem}.json" in files and f"{stem}.txt" in files
    assert "models/primal.json" in files and "models/substitute.json" in files
    assert "adversarial/pgd.jsonl" in files and "records/pgd.jsonl" in files
    assert "records/calibration.jsonl" in files and "calibration.json" in files
    assert SENTINEL not in files
    first = {f: (out / f).read_bytes() for f in files}
    run_pipeline(cfg, out)
    assert {f: (out / f).read_bytes() for f in files} == first


def diverge(*args, **kwargs):
    raise NumericError("training diverged")


def test_run_pipeline_stage_failure_leaves_sentinel(tmp_path, small_config, monkeypatch):
    monkeypatch.setattr(benchmark, "train", diverge)
    out = tmp_path / "out"
    with pytest.raises(StageError) as info:
        run_pipeline(config_from_dict(small_config), out)
    assert info.value.stage == "train" and str(info.value).startswith("[train]")
    assert "stage: train" in (out / SENTINEL).read_text()


def test_cli_reports_stage_failures(tmp_path, small_config_path, monkeypatch, capsys):
    monkeypatch.setattr(benchmark, "train", diverge)
    assert cli.main(["evaluate", "--config", str(small_config_path), "--out-dir", str(tmp_path / "o")]) == 2
    assert "[train]" in capsys.readouterr().err


def test_stop_after_train(tmp_path, small_config):
    out = tmp_path / "out"
    run_pipeline(config_from_dict(small_config), out, stop_after="train")
    assert (out / "models" / "auxiliary.json").exists()
    assert not (out / "records").exists()


# --- command line ------------------------------------------------------------------------------


def test_cli_evaluate_and_detect(tmp_path, small_config_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["evaluate", "--config", str(small_config_path), "--out-dir", str(out)]) == 0
    report = json.loads(next(out.glob("report_*.json")).read_text())
    row = next(r for r in report["rows"] if r["attack_name"] == "pgd" and r["metric_id"] == 1)
    capsys.readouterr()

    records_path = out / "records" / "pgd.jsonl"
    assert cli.main(["detect", "--records", str(records_path), "--metric", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    summary = json.loads(lines[-1])["summary"]
    adv, clean = split_scores(load_prediction_records(records_path), 1)
    assert summary["auc"] == auc(adv, clean)
    assert abs(summary["auc"] - row["auc"]) <= 1e-12
    decisions = [json.loads(line) for line in lines[:-1]]
    assert len(decisions) == summary["n_records"]
    assert {d["decision"] for d in decisions} <= {"adversarial", "normal"}


def test_cli_detect_with_threshold_and_calibration(tmp_path, small_config_path, capsys):
    out = tmp_path / "out"
    cli.main(["evaluate", "--config", str(small_config_path), "--out-dir", str(out)])
    capsys.readouterr()
    records = str(out / "records" / "pgd.jsonl")
    assert cli.main(["detect", "--records", records, "--threshold", "2.0"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert all(json.loads(x)["decision"] == "normal" for x in lines[:-1])
    calib = json.loads((out / "calibration.json").read_text())
    assert cli.main(["detect", "--records", records, "--calibration-records",
                     str(out / "records" / "calibration.jsonl"), "--target-fpr", "0.05"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["summary"]
    assert summary["threshold"] == calib["thresholds"]["1"]


def test_cli_flags_override_config(tmp_path, small_config_path):
    out = tmp_path / "out"
    code = cli.main(["evaluate", "--config", str(small_config_path), "--out-dir", str(out),
                     "--seed", "11", "--metrics", "1,3", "--n", "2", "--target-fpr", "0.1",
                     "--set", "attacks=[]"])
    assert code == 0
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["seed"] == 11 and resolved["detector"] == {"metrics": [1, 3], "n": 2, "target_fpr": 0.1}
    report = json.loads(next(out.glob("report_*.json")).read_text())
    assert report["rows"] == []


def test_cli_config_errors_write_nothing(tmp_path, small_config_path, capsys):
    out = tmp_path / "never"
    code = cli.main(["evaluate", "--config", str(small_config_path), "--out-dir", str(out),
                     "--set", "attacks[1].epsilon=-0.5"])
    assert code == 1 and not out.exists()
    assert "attacks[1].epsilon" in capsys.readouterr().err
    assert cli.main(["train", "--config", str(tmp_path / "missing.json"), "--out-dir", str(out)]) == 1
    assert not out.exists()


def test_cli_runtime_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a"}\n', encoding="utf-8")
    assert cli.main(["detect", "--records", str(bad)]) == 2
    assert "line 1" in capsys.readouterr().err


def test_cli_out_dir_from_environment(tmp_path, small_config_path, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv("PID_OUT_DIR", str(target))
    assert cli.main(["train", "--config", str(small_config_path)]) == 0
    assert (target / "models" / "primal.json").exists()


def test_cli_attack_stage(tmp_path, small_config_path):
    out = tmp_path / "out"
    assert cli.main(["attack", "--config", str(small_config_path), "--out-dir", str(out)]) == 0
    assert (out / "adversarial" / "fgsm.jsonl").exists()
    assert not list(out.glob("report_*"))
    assert not os.path.exists(out / SENTINEL)
