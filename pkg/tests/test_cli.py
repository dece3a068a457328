from __future__ import annotations

import json
from pathlib import Path
from typing import Dict

import pytest
from click.testing import CliRunner

from risklab.__main__ import cli, main
from risklab.errors import EXIT_COMPUTE, EXIT_CONFIG, EXIT_DATA, EXIT_OK
from risklab.models import CSV_HEADER
from risklab.pipeline import artifact_path

from .conftest import make_county_rows, write_county_csv


def _write_config(path: Path, payload: Dict[str, object]) -> Path:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def _clean_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("RISKLAB_SEED", raising=False)
    monkeypatch.delenv("RISKLAB_JOBS", raising=False)


def test_run_writes_report_and_plots(tmp_path: Path, small_config_payload: Dict[str, object]) -> None:
    config = _write_config(tmp_path / "run.json", dict(small_config_payload, emit_plots=True))

    assert main(["run", "--config", str(config)]) == EXIT_OK

    output_dir = tmp_path / "out"
    manifest = json.loads((output_dir / "manifest.json").read_text(encoding="utf-8"))
    paths = [entry["path"] for entry in manifest["files"]]
    assert len(paths) == 14
    assert "plots/elbow.svg" in paths
    assert "plots/shap_rank_dots_3.svg" in paths
    assert all(len(entry["sha256"]) == 64 for entry in manifest["files"])


def test_stage_commands_match_a_full_run(tmp_path: Path, county_csv: Path,
                                         small_config_payload: Dict[str, object]) -> None:
    config = _write_config(tmp_path / "run.json", small_config_payload)
    stepwise = tmp_path / "stepwise"

    assert main(["run", "--config", str(config)]) == EXIT_OK
    assert main(["ingest", "--in", str(county_csv), "--out", str(stepwise), "--config", str(config)]) == EXIT_OK
    for previous, stage in (("ingest", "cluster"), ("cluster", "train"), ("train", "explain")):
        artifact = artifact_path(stepwise, previous)
        assert main([stage, "--in", str(artifact), "--out", str(stepwise), "--jobs", "2"]) == EXIT_OK

    assert (stepwise / "report.json").read_bytes() == (tmp_path / "out" / "report.json").read_bytes()


def test_unknown_model_kind_is_a_config_error(tmp_path: Path, small_config_payload: Dict[str, object]) -> None:
    config = _write_config(tmp_path / "run.json", dict(small_config_payload, models=[{"kind": "XGBOOST"}]))

    assert main(["run", "--config", str(config)]) == EXIT_CONFIG
    assert not (tmp_path / "out").exists()


def test_bad_header_is_a_data_error(tmp_path: Path, small_config_payload: Dict[str, object]) -> None:
    header = list(CSV_HEADER)
    header[1] = "name"
    csv_path = write_county_csv(tmp_path / "bad.csv", make_county_rows(n=10), header=header)
    config = _write_config(tmp_path / "run.json", dict(small_config_payload, input_path=str(csv_path)))

    assert main(["run", "--config", str(config)]) == EXIT_DATA


def test_zero_workers_are_rejected(tmp_path: Path, small_config_payload: Dict[str, object]) -> None:
    config = _write_config(tmp_path / "run.json", small_config_payload)

    assert main(["run", "--config", str(config), "--jobs", "0"]) == EXIT_CONFIG


def test_invalid_jobs_environment(tmp_path: Path, small_config_payload: Dict[str, object],
                                  monkeypatch: pytest.MonkeyPatch) -> None:
    config = _write_config(tmp_path / "run.json", small_config_payload)
    monkeypatch.setenv("RISKLAB_JOBS", "many")

    assert main(["run", "--config", str(config)]) == EXIT_CONFIG


def test_missing_config_file_is_a_usage_error(tmp_path: Path) -> None:
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_plot_command_renders_csv(tmp_path: Path) -> None:
    table = tmp_path / "elbow.csv"
    table.write_text("k,sse,chosen\n1,10.0,0\n2,4.0,1\n3,3.5,0\n", encoding="utf-8")
    target = tmp_path / "elbow.svg"

    result = CliRunner().invoke(cli, ["plot", "--kind", "elbow", "--in", str(table), "--out", str(target)])

    assert result.exit_code == 0, result.output
    assert target.read_text(encoding="utf-8").lstrip().startswith("<?xml")


def test_plot_command_reports_missing_columns(tmp_path: Path) -> None:
    table = tmp_path / "wrong.csv"
    table.write_text("a,b\n1,2\n", encoding="utf-8")

    code = main(["plot", "--kind", "elbow", "--in", str(table), "--out", str(tmp_path / "x.svg")])

    assert code == EXIT_COMPUTE
