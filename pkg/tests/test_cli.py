from __future__ import annotations

import csv
import json
import os
import subprocess
import sys

import pytest
import yaml

from conceptguard.cli import main
from conceptguard.config import ConfigError, apply_override, load_config

SMALL = [
    "--partial", "dataset.n_samples=60",
    "--partial", "eval.repeats=1",
    "--partial", "eval.ratios=[0.5,1.0]",
    "--partial", "bounds.n_max=5",
    "--workers", "1",
]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path), *SMALL])


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_full_flow(tmp_path, capsys):
    assert run(tmp_path, "gen") == 0
    out = capsys.readouterr().out
    assert "factors:" in out and "category-concept rules:" in out
    for name in ("instances.jsonl", "rules.rules", "signatures.json"):
        assert (tmp_path / name).exists()

    assert run(tmp_path, "run") == 0
    report = rows(tmp_path / "report.csv")
    assert [r["B (ε-analogue)"] for r in report] == ["", "1", "2", "3", "4"]
    assert report[0]["SR"] == "100.000000" and report[0]["IR"] == ""
    detail = json.loads((tmp_path / "report.json").read_text())
    assert set(detail["instances"]) == {"clean", "B=1", "B=2", "B=3", "B=4"}
    first = detail["instances"]["B=1"][0]
    assert {"flips", "gains", "lsm_before", "lsm_after"} <= set(first)
    attacked = (tmp_path / "attacked_B2.jsonl").read_text().splitlines()
    assert json.loads(attacked[0])["provenance"]["budget"] == 2

    assert run(tmp_path, "learn-weights", "--partial", "weights.epochs=3") == 0
    assert len((tmp_path / "weights.txt").read_text().splitlines()) == len(
        [l for l in (tmp_path / "rules.rules").read_text().splitlines() if l.strip()]
    )
    assert run(tmp_path, "run", "--partial", "weights.mode=mle") == 0

    assert run(tmp_path, "bounds") == 0
    sweep = rows(tmp_path / "bounds_sweep.csv")
    assert sweep[0]["N"] == "0" and float(sweep[0]["bound"]) == 0.0
    assert len(rows(tmp_path / "bounds.csv")) == 10

    assert run(tmp_path, "sweep") == 0
    s = rows(tmp_path / "sweep.csv")
    assert {r["setting"] for r in s} == {"0.5", "1", "empty", "category", "concept", "both"}


def test_clean_only_and_no_repair(tmp_path):
    assert run(tmp_path, "gen") == 0
    assert run(tmp_path, "run", "--clean-only") == 0
    report = rows(tmp_path / "report.csv")
    assert len(report) == 1 and report[0]["IR"] == ""
    assert run(tmp_path, "run", "--no-repair") == 0
    for r in rows(tmp_path / "report.csv")[1:]:
        assert r["LSM"] == r["LSM_before"]


def test_byte_identical_reruns(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "gen") == 0
        assert run(d, "run") == 0
    for name in ("instances.jsonl", "rules.rules", "signatures.json", "report.csv", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "gen", "--partial", "schema.K=300", "--partial", "schema.k=2") == 2
    assert "C(10,2)" in capsys.readouterr().err
    assert run(tmp_path / "empty", "run") == 2
    assert run(tmp_path, "gen", "--partial", "identify.threshold=1.5") == 2
    assert run(tmp_path, "gen", "--partial", "unknown.key=1") == 2
    assert main(["gen", "--config", str(tmp_path / "missing.yaml")]) == 2
    # MLE weights requested before learning them
    assert run(tmp_path, "gen") == 0
    assert run(tmp_path, "run", "--partial", "weights.mode=mle") == 2
    # a rule file with a syntax error
    bad = tmp_path / "bad.rules"
    bad.write_text("c0 <->\n")
    assert run(tmp_path, "run", "--partial", f"rules.path={bad}") == 2


def test_runtime_failure_exit_code(tmp_path, monkeypatch):
    import conceptguard.cli as cli

    assert run(tmp_path, "gen") == 0

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert run(tmp_path, "run") == 1


def test_bounds_explicit_inputs(tmp_path, capsys):
    inputs = {"concepts": [{"inputs": {
        "L_TP": 0.9, "U_TP": 0.9, "L_TN": 0.9, "U_TN": 0.9, "L_FN": 0.1, "U_FN": 0.1,
        "L_FP": 0.1, "U_FP": 0.1, "T_P": 0.9, "T_N": 0.9, "F_N": 0.1, "F_P": 0.1, "c": 1.0,
    }, "taus": [1.0, 2.0]}]}
    p = tmp_path / "b.json"
    p.write_text(json.dumps(inputs))
    assert run(tmp_path, "bounds", "--inputs", str(p)) == 0
    result = json.loads((tmp_path / "bounds.json").read_text())
    assert result["theorem1"] == 0.0  # negative lower bound is vacuous
    inputs["concepts"][0]["inputs"].update(L_FP=1.0, U_FP=1.0, F_P=1.0)
    p.write_text(json.dumps(inputs))
    assert run(tmp_path, "bounds", "--inputs", str(p)) == 2
    assert "U_FP" in capsys.readouterr().err


def test_config_file_and_overrides(tmp_path):
    cfg_path = tmp_path / "exp.yaml"
    cfg_path.write_text(yaml.safe_dump({"schema": {"K": 4, "M": 8, "k": 3}, "attack": {"budgets": [1]}}))
    cfg = load_config(cfg_path, ["attack.gamma=0.6"])
    assert cfg["schema"]["K"] == 4 and cfg["attack"]["budgets"] == [1] and cfg["attack"]["gamma"] == 0.6
    assert cfg["identify"]["threshold"] == 0.9
    with pytest.raises(ConfigError):
        apply_override(cfg, "no-equals")
    with pytest.raises(ConfigError):
        load_config(None, ["attack=3"])
    out = tmp_path / "o"
    assert main(["gen", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert len(json.loads((out / "signatures.json").read_text())) == 4


def test_env_var_output_dir(tmp_path):
    env = dict(os.environ, CONCEPTGUARD_OUT=str(tmp_path / "envout"))
    proc = subprocess.run(
        [sys.executable, "-m", "conceptguard", "gen", "--partial", "dataset.n_samples=5", "--timing"],
        env=env, capture_output=True, text=True, cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    assert "timing generate" in proc.stderr
    assert (tmp_path / "envout" / "instances.jsonl").exists()
