from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import pytest

from risklab.config import PipelineConfig
from risklab.errors import ComputeError, DataError
from risklab.pipeline import (
    PipelineError,
    RunState,
    artifact_path,
    check_provenance,
    execute_stages,
    load_stage,
    run_pipeline,
    training_data,
)
from risklab.report import DATA_FILES, RunReport

from .conftest import make_county_rows, write_county_csv

CONFIG: Dict[str, object] = {
    "seed": 11,
    "k_range": [1, 6],
    "k_override": 3,
    "cv_folds": 3,
    "kmeans_restarts": 3,
    "mda_repetitions": 2,
    "emit_plots": False,
    "models": [
        {"kind": "RANDOM_FOREST", "hyperparameters": {"trees": 25}},
        {"kind": "MLR"},
        {"kind": "LDA"},
        {"kind": "QDA"},
        {"kind": "KNN"},
        {"kind": "SVM_LINEAR"},
        {"kind": "SVM_RBF"},
        {"kind": "SVM_POLY"},
    ],
}


def _config(csv_path: Path, output_dir: Path, **overrides: object) -> PipelineConfig:
    payload = dict(CONFIG, input_path=str(csv_path), output_dir=str(output_dir))
    payload.update(overrides)
    return PipelineConfig.from_dict(payload)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("pipeline")
    write_county_csv(root / "counties.csv", make_county_rows())
    return root


@pytest.fixture(scope="module")
def safe_run(workspace: Path) -> Tuple[RunReport, Path]:
    output_dir = workspace / "safe"
    report = run_pipeline(_config(workspace / "counties.csv", output_dir), n_jobs=1)
    return report, output_dir


def test_report_files_are_written(safe_run: Tuple[RunReport, Path]) -> None:
    _, output_dir = safe_run

    for name in DATA_FILES:
        assert (output_dir / name).exists()
    for stage in ("ingest", "cluster", "train", "explain"):
        assert artifact_path(output_dir, stage).exists()
    manifest = json.loads((output_dir / "manifest.json").read_text(encoding="utf-8"))
    assert [entry["path"] for entry in manifest["files"]] == list(DATA_FILES)
    assert not list(output_dir.rglob("*.partial"))
    assert not (output_dir / "plots").exists()


def test_planted_risk_groups_are_recovered(safe_run: Tuple[RunReport, Path]) -> None:
    report, _ = safe_run

    assert report.k == 3
    assert report.k_source == "override"
    stats = report.labeling.stats_by_rank()
    assert [item.label for item in stats] == ["High", "Medium", "Low"]
    assert [item.count for item in stats] == [18, 36, 36]
    assert stats[0].mean_positive_rate > stats[1].mean_positive_rate > stats[2].mean_positive_rate
    assert [k for k, _ in report.elbow.points] == list(range(1, 7))


def test_every_configured_model_is_reported(safe_run: Tuple[RunReport, Path]) -> None:
    report, output_dir = safe_run

    kinds = [outcome.kind for outcome in report.models]
    assert kinds == [entry["kind"] for entry in CONFIG["models"]]  # type: ignore[union-attr]
    for outcome in report.models:
        assert len(outcome.evaluation.fold_accuracies) == 3
        assert 0.0 <= outcome.evaluation.test_accuracy <= 1.0
    best = next(outcome for outcome in report.models if outcome.kind == report.best_model)
    assert best.evaluation.test_accuracy >= 0.9
    assert all(best.evaluation.test_accuracy >= outcome.evaluation.test_accuracy for outcome in report.models)
    table = (output_dir / "table3_models.csv").read_text(encoding="utf-8").splitlines()
    assert table[0] == "model,cv_mean,cv_sd,test_accuracy"
    assert len(table) == 9


def test_population_density_explains_the_groups(safe_run: Tuple[RunReport, Path]) -> None:
    report, _ = safe_run

    importance = report.importance
    assert importance is not None
    position = importance.feature_names.index("pop_density")
    assert importance.mdg_rank[position] == 1
    assert importance.mda_rank[position] == 1
    assert report.shap is not None
    assert report.shap.class_labels == ("High", "Medium", "Low")
    assert report.shap.ranking("High")[0] == "pop_density"
    assert report.dependence_features[0] == "pop_density"
    assert len(report.dependence_features) == 4


def test_leakage_safe_split_sizes(workspace: Path) -> None:
    state = execute_stages(RunState(config=_config(workspace / "counties.csv", workspace / "sizes")),
                           ("ingest", "cluster"))
    assert state.ingest is not None and state.cluster is not None

    data = training_data(state.config, state.ingest, state.cluster)

    assert data.train_idx.shape[0] == 72
    assert data.test_idx.shape[0] == 18
    assert data.n_synthetic == 15
    assert np.intersect1d(data.train_idx, data.test_idx).shape[0] == 0
    assert data.X_fit.shape[0] == 87

    balanced_first = training_data(replace(state.config, smote_before_split=True), state.ingest, state.cluster)

    assert balanced_first.n_synthetic == 18
    assert balanced_first.X_pool.shape[0] == 108
    assert balanced_first.test_idx.shape[0] == 21
    assert np.bincount(balanced_first.y_pool).tolist() == [36, 36, 36]


def test_results_do_not_depend_on_worker_count(workspace: Path, safe_run: Tuple[RunReport, Path]) -> None:
    _, serial_dir = safe_run
    threaded_dir = workspace / "threaded"

    run_pipeline(_config(workspace / "counties.csv", threaded_dir), n_jobs=2)

    for name in DATA_FILES:
        assert (threaded_dir / name).read_bytes() == (serial_dir / name).read_bytes()


def test_resume_after_cluster_reproduces_the_report(workspace: Path, safe_run: Tuple[RunReport, Path]) -> None:
    _, full_dir = safe_run
    resumed_dir = workspace / "resumed"

    run_pipeline(_config(workspace / "counties.csv", resumed_dir), resume_from=artifact_path(full_dir, "cluster"))

    assert (resumed_dir / "report.json").read_bytes() == (full_dir / "report.json").read_bytes()
    assert load_stage(artifact_path(resumed_dir, "explain")).completed == "explain"


def test_stage_artifacts_are_cumulative(safe_run: Tuple[RunReport, Path]) -> None:
    _, output_dir = safe_run

    state = load_stage(artifact_path(output_dir, "train"), output_dir=output_dir / "elsewhere")

    assert state.completed == "train"
    assert state.ingest is not None and state.cluster is not None and state.train is not None
    assert state.explain is None
    assert state.config.output_dir == output_dir / "elsewhere"
    assert state.train.forest is not None and state.train.forest.kind == "RANDOM_FOREST"


def test_replication_mode_runs_end_to_end(workspace: Path) -> None:
    report = run_pipeline(_config(workspace / "counties.csv", workspace / "replication", smote_before_split=True))

    assert report.config["smote_before_split"] is True
    assert len(report.models) == 8
    assert (workspace / "replication" / "report.json").exists()


def test_without_random_forest_attribution_is_skipped(workspace: Path) -> None:
    config = _config(workspace / "counties.csv", workspace / "no_forest", models=[{"kind": "LDA"}])

    report = run_pipeline(config)

    assert report.importance is None
    assert report.shap is None
    assert json.loads((workspace / "no_forest" / "report.json").read_text(encoding="utf-8"))["shap"] is None


def test_missing_input_fails_in_ingest(tmp_path: Path) -> None:
    with pytest.raises(PipelineError) as excinfo:
        run_pipeline(_config(tmp_path / "absent.csv", tmp_path / "out"))

    assert excinfo.value.stage == "ingest"
    assert excinfo.value.exit_code == DataError.exit_code


def test_corrupt_stage_artifact_is_rejected(tmp_path: Path) -> None:
    broken = tmp_path / "cluster.json"
    broken.write_text(json.dumps({"schema": "risklab.stage-artifact/1", "stage": "cluster"}), encoding="utf-8")

    with pytest.raises(PipelineError, match="invalid stage artifact"):
        load_stage(broken)


def test_provenance_check_detects_leakage() -> None:
    check_provenance(np.array([[0, 1], [2, 3]]), np.array([4, 5]))

    with pytest.raises(ComputeError, match="leakage: 1 test rows"):
        check_provenance(np.array([[0, 1], [2, 5]]), np.array([4, 5]))
