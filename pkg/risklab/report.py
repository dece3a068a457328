"""
Run report assembly and output files.

Deutsch:
    Zusammenstellung des Laufberichts und Schreiben der Ergebnisdateien.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .artifacts import ReportError, sha256_of_path, write_csv_atomic, write_json_atomic
from .cluster import ElbowCurve
from .explain.summary import ShapSummary
from .ingest import CorrelationScreenResult, DatasetSummary
from .models import EvalReport, ImportanceReport, RiskLabeling
from .plots import render_plot
from .schemas import schema_errors

log = logging.getLogger(__name__)

RUN_REPORT_SCHEMA = "risklab.run-report/1"
MANIFEST_SCHEMA = "risklab.manifest/1"
DATA_FILES = ("report.json", "table2_clusters.csv", "table3_models.csv", "importance.csv", "shap_long.csv")


@dataclass(frozen=True)
class ModelOutcome:
    """Cross-validation and test metrics of one configured model, plus fit warnings."""

    kind: str
    evaluation: EvalReport
    warnings: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        payload = self.evaluation.to_dict()
        payload["kind"] = self.kind
        payload["warnings"] = list(self.warnings)
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ModelOutcome":
        return cls(
            kind=str(payload["kind"]),
            evaluation=EvalReport.from_dict(payload),
            warnings=tuple(payload.get("warnings", ())),
        )


@dataclass(frozen=True, eq=False)
class ClusterPoints:
    """Per-county rates and risk labels behind the scatter and box plots."""

    fips: Tuple[str, ...]
    rates: np.ndarray
    clusters: np.ndarray
    risk_labels: Tuple[str, ...]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "fips": list(self.fips),
                "positive_rate": self.rates[:, 0],
                "death_rate": self.rates[:, 1],
                "cluster": self.clusters.astype(np.int64),
                "risk_label": list(self.risk_labels),
            }
        )


@dataclass(frozen=True, eq=False)
class RunReport:
    """
    Everything one pipeline run reports.

    ``points`` only feeds the figures and is not part of ``report.json``.

    Deutsch:
        Gesamtergebnis eines Pipeline-Laufs.
    """

    config: Mapping[str, Any]
    dataset: DatasetSummary
    screen: CorrelationScreenResult
    elbow: ElbowCurve
    k: int
    k_source: str
    labeling: RiskLabeling
    models: Tuple[ModelOutcome, ...]
    best_model: str
    importance: Optional[ImportanceReport] = None
    shap: Optional[ShapSummary] = None
    dependence_features: Tuple[str, ...] = ()
    points: Optional[ClusterPoints] = field(default=None, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": RUN_REPORT_SCHEMA,
            "config": dict(self.config),
            "dataset": self.dataset.to_dict(),
            "screen": self.screen.to_dict(),
            "clustering": {
                "k": self.k,
                "k_source": self.k_source,
                "elbow": self.elbow.to_dict(),
                "labeling": self.labeling.to_dict(),
            },
            "models": [outcome.to_dict() for outcome in self.models],
            "best_model": self.best_model,
            "importance": self.importance.to_dict() if self.importance is not None else None,
            "shap": (
                dict(self.shap.to_dict(), dependence_features=list(self.dependence_features))
                if self.shap is not None
                else None
            ),
        }


def cluster_table(labeling: RiskLabeling) -> pd.DataFrame:
    """One row per risk level: size and mean/sd of both rates."""

    rows = [
        {
            "risk_label": item.label,
            "rank": item.rank,
            "cluster": item.cluster,
            "count": item.count,
            "mean_positive_rate": item.mean_positive_rate,
            "sd_positive_rate": item.sd_positive_rate,
            "mean_death_rate": item.mean_death_rate,
            "sd_death_rate": item.sd_death_rate,
        }
        for item in labeling.stats_by_rank()
    ]
    return pd.DataFrame(rows)


def model_table(models: Tuple[ModelOutcome, ...]) -> pd.DataFrame:
    """One row per configured model, in configuration order."""

    return pd.DataFrame(
        [
            {
                "model": outcome.kind,
                "cv_mean": outcome.evaluation.cv_mean,
                "cv_sd": outcome.evaluation.cv_sd,
                "test_accuracy": outcome.evaluation.test_accuracy,
            }
            for outcome in models
        ],
        columns=["model", "cv_mean", "cv_sd", "test_accuracy"],
    )


def importance_table(importance: Optional[ImportanceReport]) -> pd.DataFrame:
    """One row per feature with every importance criterion."""

    base = ["feature", "mda_mean", "mda_sd", "mda_rank", "mdg", "mdg_rank"]
    if importance is None:
        return pd.DataFrame(columns=base)
    frame = pd.DataFrame(
        {
            "feature": list(importance.feature_names),
            "mda_mean": importance.mda_mean,
            "mda_sd": importance.mda_sd,
            "mda_rank": importance.mda_rank,
            "mdg": importance.mdg,
            "mdg_rank": importance.mdg_rank,
        }
    )
    if importance.shap_mean_abs is not None:
        for column, label in enumerate(importance.class_labels):
            frame[f"shap_mean_abs_{label}"] = importance.shap_mean_abs[:, column]
    return frame


def elbow_table(elbow: ElbowCurve) -> pd.DataFrame:
    return pd.DataFrame(
        [{"k": k, "sse": sse, "chosen": int(k == elbow.chosen_k)} for k, sse in elbow.points],
        columns=["k", "sse", "chosen"],
    )


def correlation_table(screen: CorrelationScreenResult) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(screen.corr), columns=list(screen.column_names))
    frame.insert(0, "feature", list(screen.column_names))
    return frame


def shap_long_table(report: RunReport) -> pd.DataFrame:
    if report.shap is None:
        return pd.DataFrame(columns=["class_label", "feature", "fips", "feature_value", "shap_value"])
    return report.shap.long_frame()


def _render_plots(report: RunReport, plot_dir: Path) -> List[Path]:
    written = [render_plot("elbow", elbow_table(report.elbow), plot_dir / "elbow.svg")]
    written.append(render_plot("correlation_heatmap", correlation_table(report.screen),
                               plot_dir / "correlation_heatmap.svg"))
    if report.points is not None:
        frame = report.points.frame()
        written.append(render_plot("cluster_scatter", frame, plot_dir / "cluster_scatter.svg"))
        written.append(render_plot("cluster_boxplot", frame, plot_dir / "cluster_boxplot.svg"))
    if report.importance is not None:
        written.append(render_plot("importance_bars", importance_table(report.importance),
                                   plot_dir / "importance_bars.svg"))
    if report.shap is not None:
        long_frame = report.shap.long_frame()
        for position, label in enumerate(report.shap.class_labels):
            written.append(render_plot("shap_rank_dots", long_frame, plot_dir / f"shap_rank_dots_{position + 1}.svg",
                                       class_label=label))
        written.append(render_plot("shap_dependence", report.shap.long_frame(report.dependence_features),
                                   plot_dir / "shap_dependence.svg"))
    return written


def write_report(report: RunReport, output_dir: Path, emit_plots: bool = True) -> Dict[str, Any]:
    """
    Write the report files, optional figures and a manifest with one SHA-256 digest per file.

    Deutsch:
        Schreibt Bericht, Tabellen, Grafiken und ein Manifest mit Prüfsummen.
    """

    output_dir = Path(output_dir)
    payload = report.to_dict()
    problems = schema_errors(payload, "run_report.schema.json")
    if problems:
        raise ReportError("run report failed schema validation: " + "; ".join(problems))

    written = [
        write_json_atomic(output_dir / "report.json", payload),
        write_csv_atomic(output_dir / "table2_clusters.csv", cluster_table(report.labeling)),
        write_csv_atomic(output_dir / "table3_models.csv", model_table(report.models)),
        write_csv_atomic(output_dir / "importance.csv", importance_table(report.importance)),
        write_csv_atomic(output_dir / "shap_long.csv", shap_long_table(report)),
    ]
    if emit_plots:
        written.extend(_render_plots(report, output_dir / "plots"))

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "files": [
            {"path": path.relative_to(output_dir).as_posix(), "sha256": sha256_of_path(path)}
            for path in written
        ],
    }
    write_json_atomic(output_dir / "manifest.json", manifest)
    log.info("report written to %s (%d files)", output_dir, len(written))
    return manifest
