import json
from pathlib import Path

import pytest

from gibbs_lattice.cli import COLUMNS, main
from gibbs_lattice.config import ExperimentConfig, parse_config, ConfigError, validate_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2))
    return p


def test_config_round_trip():
    cfg = parse_config((CONFIGS / "homogenize_gaussian.json").read_text())
    again = ExperimentConfig.model_validate_json(cfg.to_json())
    assert again == cfg


def test_unknown_field_rejected_with_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "schema_version": 1,\n  "kind": "verify",\n  "colour": "red"\n}\n')
    with pytest.raises(ConfigError) as exc:
        parse_config(p.read_text())
    assert "line 4" in exc.value.diagnostics[0] and "colour" in exc.value.diagnostics[0]
    assert main(["--config", str(p)]) == 2


def test_json_syntax_error_line(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config('{\n "kind": "verify",\n}')
    assert exc.value.diagnostics[0].startswith("line 3")


def test_validate_reports():
    assert validate_config(CONFIGS / "homogenize_gaussian.json")["ok"]
    rep = validate_config(CONFIGS / "bad_summability.json")
    assert not rep["ok"] and any("summability" in d for d in rep["diagnostics"])
    rep = validate_config(CONFIGS / "bad_sbv_schedule.json")
    assert not rep["ok"] and any("threshold_scaling" in d for d in rep["diagnostics"])
    assert main(["--config", str(CONFIGS / "bad_summability.json"), "--check"]) == 1


def test_free_energy_run_and_csv_format(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", str(CONFIGS / "free_energy_small.json"), "--out", str(out)]) == 0
    raw = (out / "results.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    lines = raw.decode("utf-8").splitlines()
    assert lines[0].split(",") == list(COLUMNS)
    row = lines[1].split(",")
    assert float(row[0]) == 0.25 and repr(float(row[2])) == row[2]
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and len(man["config_digest"]) == 64 and "numpy" in man["versions"]


def test_runtime_failure_keeps_partial_rows(tmp_path):
    doc = json.loads((CONFIGS / "free_energy_small.json").read_text())
    doc["method"] = "exact"
    p = _write(tmp_path, doc)
    out = tmp_path / "o"
    assert main(["--config", str(p), "--out", str(out)]) == 3
    lines = (out / "results.csv").read_text().splitlines()
    assert len(lines) == 4 and ",FAILED," in lines[-1]
    assert json.loads((out / "manifest.json").read_text())["status"] == "FAILED"


def test_seed_override_changes_seed_column(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", str(CONFIGS / "free_energy_small.json"), "--out", str(out), "--seed", "42"]) == 0
    assert (out / "results.csv").read_text().splitlines()[1].split(",")[7] == "42"
