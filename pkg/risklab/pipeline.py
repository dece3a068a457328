"""
End-to-end orchestration: ingest, cluster, train and explain.

Every stage returns an immutable state that serializes into a cumulative artifact
(``artifacts/<stage>.json`` embeds all earlier stages and the config), so a run can be
resumed after any stage and still produce the same report.

Deutsch:
    Ablaufsteuerung der Pipeline mit wiederaufnehmbaren Stufen-Artefakten.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .artifacts import read_json, write_csv_atomic, write_json_atomic
from .balance import SmoteConfig, smote_oversample
from .cluster import ElbowCurve, assign_risk_labels, elbow_select_k, kmeans_fit
from .config import PipelineConfig
from .errors import ComputeError, DataError, RiskLabError
from .explain import ExplainError
from .explain.importance import importance_report
from .explain.summary import ShapSummary, shap_summary
from .explain.treeshap import tree_shap
from .ingest import (
    CorrelationScreenResult,
    DatasetSummary,
    ImputationEntry,
    Issue,
    build_predictor_table,
    correlation_matrix,
    impute_missing,
    load_county_table,
    rate_matrix,
    screen_collinear,
    standardize_features,
    summarize,
)
from .learn import fit_classifier, predict
from .learn.forest import forest_proba
from .learn.validation import evaluate, kfold_cv, stratified_split
from .models import CountyRecord, FeatureTable, ImportanceReport, KMeansModel, RiskLabeling, ShapMatrix, TrainedModel
from .randomness import STAGE_BALANCE, STAGE_CLUSTER, STAGE_CV, STAGE_EXPLAIN, STAGE_SPLIT, derive_seed
from .report import ClusterPoints, ModelOutcome, RunReport, elbow_table, write_report
from .schemas import schema_errors

log = logging.getLogger(__name__)

STAGES = ("ingest", "cluster", "train", "explain")
STAGE_ARTIFACT_SCHEMA = "risklab.stage-artifact/1"
FOREST_KIND = "RANDOM_FOREST"
DEFAULT_DEPENDENCE_FEATURES = 4
LOCAL_ACCURACY_TOLERANCE = 1e-6


class PipelineError(RiskLabError):
    """
    A stage failed; carries the stage name and the artifacts written before the failure.

    The exit code is the one of the underlying error.
    """

    def __init__(self, stage: str, cause: Exception, artifacts: Tuple[Path, ...] = ()) -> None:
        written = ", ".join(str(path) for path in artifacts) or "none"
        super().__init__(f"stage {stage} failed: {cause} (artifacts written: {written})")
        self.stage = stage
        self.cause = cause
        self.artifacts = artifacts
        self.exit_code = getattr(cause, "exit_code", ComputeError.exit_code)


@dataclass(frozen=True, eq=False)
class IngestState:
    records: Tuple[CountyRecord, ...]
    issues: Tuple[Issue, ...]
    imputations: Tuple[ImputationEntry, ...]
    summary: DatasetSummary
    features: FeatureTable
    screen: CorrelationScreenResult

    @property
    def table(self) -> FeatureTable:
        """Standardized predictors that survived the collinearity screen."""

        return self.features.select(self.screen.kept)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "records": [record.to_dict() for record in self.records],
            "issues": [issue.to_dict() for issue in self.issues],
            "imputations": [entry.to_dict() for entry in self.imputations],
            "summary": self.summary.to_dict(),
            "features": self.features.to_dict(),
            "screen": self.screen.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "IngestState":
        return cls(
            records=tuple(CountyRecord.from_dict(item) for item in payload["records"]),
            issues=tuple(Issue.from_dict(item) for item in payload["issues"]),
            imputations=tuple(ImputationEntry.from_dict(item) for item in payload["imputations"]),
            summary=DatasetSummary.from_dict(payload["summary"]),
            features=FeatureTable.from_dict(payload["features"]),
            screen=CorrelationScreenResult.from_dict(payload["screen"]),
        )


@dataclass(frozen=True, eq=False)
class ClusterState:
    elbow: ElbowCurve
    k_source: str
    model: KMeansModel
    labeling: RiskLabeling

    @property
    def labels(self) -> np.ndarray:
        """Class label per county: risk rank - 1, so 0 is the highest risk."""

        return self.labeling.labels_for(self.model.assignments)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "elbow": self.elbow.to_dict(),
            "k_source": self.k_source,
            "model": self.model.to_dict(),
            "labeling": self.labeling.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ClusterState":
        return cls(
            elbow=ElbowCurve.from_dict(payload["elbow"]),
            k_source=str(payload["k_source"]),
            model=KMeansModel.from_dict(payload["model"]),
            labeling=RiskLabeling.from_dict(payload["labeling"]),
        )


@dataclass(frozen=True, eq=False)
class TrainingData:
    """
    Rows used for model selection. ``pool`` is the split population (balanced first in
    replication mode); ``fit`` is the training part after any oversampling.
    """

    X_pool: np.ndarray
    y_pool: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    X_fit: np.ndarray
    y_fit: np.ndarray
    n_synthetic: int


@dataclass(frozen=True, eq=False)
class TrainState:
    train_idx: np.ndarray
    test_idx: np.ndarray
    n_synthetic: int
    outcomes: Tuple[ModelOutcome, ...]
    best_model: str
    forest: Optional[TrainedModel]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "train_idx": self.train_idx.tolist(),
            "test_idx": self.test_idx.tolist(),
            "n_synthetic": self.n_synthetic,
            "outcomes": [outcome.to_dict() for outcome in self.outcomes],
            "best_model": self.best_model,
            "forest": self.forest.to_dict() if self.forest is not None else None,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "TrainState":
        forest = payload.get("forest")
        return cls(
            train_idx=np.asarray(payload["train_idx"], dtype=np.int64),
            test_idx=np.asarray(payload["test_idx"], dtype=np.int64),
            n_synthetic=int(payload["n_synthetic"]),
            outcomes=tuple(ModelOutcome.from_dict(item) for item in payload["outcomes"]),
            best_model=str(payload["best_model"]),
            forest=TrainedModel.from_dict(forest) if forest is not None else None,
        )


@dataclass(frozen=True, eq=False)
class ExplainState:
    importance: Optional[ImportanceReport]
    shap: Optional[ShapMatrix]
    dependence_features: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "importance": self.importance.to_dict() if self.importance is not None else None,
            "shap": self.shap.to_dict() if self.shap is not None else None,
            "dependence_features": list(self.dependence_features),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ExplainState":
        importance = payload.get("importance")
        shap = payload.get("shap")
        return cls(
            importance=ImportanceReport.from_dict(importance) if importance is not None else None,
            shap=ShapMatrix.from_dict(shap) if shap is not None else None,
            dependence_features=tuple(payload.get("dependence_features", ())),
        )


@dataclass(frozen=True, eq=False)
class RunState:
    """Accumulated stage states of one run."""

    config: PipelineConfig
    ingest: Optional[IngestState] = None
    cluster: Optional[ClusterState] = None
    train: Optional[TrainState] = None
    explain: Optional[ExplainState] = None

    @property
    def completed(self) -> Optional[str]:
        done = [stage for stage in STAGES if getattr(self, stage) is not None]
        return done[-1] if done else None

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "schema": STAGE_ARTIFACT_SCHEMA,
            "stage": self.completed,
            "config": self.config.to_dict(),
        }
        for stage in STAGES:
            state = getattr(self, stage)
            if state is not None:
                payload[stage] = state.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], output_dir: Optional[Path] = None) -> "RunState":
        problems = schema_errors(dict(payload), "stage_artifact.schema.json")
        if problems:
            raise PipelineError("resume", DataError("invalid stage artifact: " + "; ".join(problems)))
        config = PipelineConfig.from_dict(payload["config"])
        if output_dir is not None:
            config = replace(config, output_dir=Path(output_dir))
        state = cls(config=config)
        loaders = {
            "ingest": IngestState.from_dict,
            "cluster": ClusterState.from_dict,
            "train": TrainState.from_dict,
            "explain": ExplainState.from_dict,
        }
        for stage in STAGES[: STAGES.index(str(payload["stage"])) + 1]:
            if stage not in payload:
                raise PipelineError("resume", DataError(f"stage artifact lacks the {stage} section"))
            state = replace(state, **{stage: loaders[stage](payload[stage])})
        return state


def run_ingest(config: PipelineConfig) -> IngestState:
    """
    Load and impute the county table, build and standardize predictors, screen collinearity.

    Deutsch:
        Einlesen, Imputation, Standardisierung und Korrelations-Screening.
    """

    raw_records, issues = load_county_table(config.input_path)
    records, imputations = impute_missing(raw_records)
    names, values, keys = build_predictor_table(records, climate_one_hot=config.climate_one_hot)
    features = standardize_features(values, names, keys)
    screen = screen_collinear(correlation_matrix(features), features.column_names, config.correlation_threshold)
    n_rows = len(records) + sum(1 for issue in issues if issue.severity == "rejected")
    summary = summarize(n_rows, records, issues, imputations, features.dropped_constant)
    log.info("ingest: %d counties accepted, %d rejected, %d predictors kept", summary.n_accepted,
             summary.n_rejected, len(screen.kept))
    return IngestState(
        records=tuple(records),
        issues=tuple(issues),
        imputations=tuple(imputations),
        summary=summary,
        features=features,
        screen=screen,
    )


def cluster_points(config: PipelineConfig, ingest: IngestState) -> np.ndarray:
    """(positive_rate, death_rate) per county, z-scored when configured."""

    rates = rate_matrix(ingest.records)
    if not config.standardize_cluster_features:
        return rates
    return standardize_features(rates, ("positive_rate", "death_rate"), ingest.features.row_keys).values


def run_cluster(config: PipelineConfig, ingest: IngestState, n_jobs: int = 1) -> ClusterState:
    """
    Elbow curve over ``k_range``, final k-means fit and risk labeling by mean rates.

    Deutsch:
        Elbow-Kurve, K-Means mit gewähltem k und Zuordnung der Risikostufen.
    """

    points = cluster_points(config, ingest)
    keys = ingest.features.row_keys
    seed = derive_seed(config.seed, STAGE_CLUSTER)
    low, high = config.k_range
    high = min(high, points.shape[0])
    elbow = elbow_select_k(points, k_min=min(low, high), k_max=high, seed=seed, restarts=config.kmeans_restarts,
                           row_keys=keys, n_jobs=n_jobs)
    if config.k_override is not None:
        k, source = config.k_override, "override"
    else:
        k, source = elbow.chosen_k, "elbow"
    model = elbow.models.get(k)
    if model is None:
        model = kmeans_fit(points, k, seed, restarts=config.kmeans_restarts, row_keys=keys, n_jobs=n_jobs)
    labeling = assign_risk_labels(model, rate_matrix(ingest.records))
    for item in labeling.stats_by_rank():
        log.info("cluster %s: n=%d mean positive rate %.4f, mean death rate %.5f", item.label, item.count,
                 item.mean_positive_rate, item.mean_death_rate)
    return ClusterState(elbow=elbow, k_source=source, model=model, labeling=labeling)


def training_data(config: PipelineConfig, ingest: IngestState, cluster: ClusterState,
                  n_jobs: int = 1) -> TrainingData:
    """
    Split (and oversample) the labeled predictor rows.

    Leakage-safe mode splits the original rows and oversamples the training part only;
    replication mode oversamples every row before splitting.
    """

    X = ingest.table.values
    y = cluster.labels
    smote = SmoteConfig(k_neighbors=config.smote_k_neighbors, seed=derive_seed(config.seed, STAGE_BALANCE))
    split_seed = derive_seed(config.seed, STAGE_SPLIT)
    if config.smote_before_split:
        balanced = smote_oversample(X, y, smote, n_jobs)
        train_idx, test_idx = stratified_split(balanced.X, balanced.y, config.test_fraction, split_seed)
        return TrainingData(
            X_pool=balanced.X,
            y_pool=balanced.y,
            train_idx=train_idx,
            test_idx=test_idx,
            X_fit=balanced.X[train_idx],
            y_fit=balanced.y[train_idx],
            n_synthetic=int(balanced.parents.shape[0]),
        )

    train_idx, test_idx = stratified_split(X, y, config.test_fraction, split_seed)
    balanced = smote_oversample(X[train_idx], y[train_idx], smote, n_jobs)
    check_provenance(train_idx[balanced.parents], test_idx)
    return TrainingData(
        X_pool=X,
        y_pool=y,
        train_idx=train_idx,
        test_idx=test_idx,
        X_fit=balanced.X,
        y_fit=balanced.y,
        n_synthetic=int(balanced.parents.shape[0]),
    )


def check_provenance(parents: np.ndarray, test_idx: np.ndarray) -> None:
    """Fail when any synthetic training row was interpolated from a test row."""

    leaked = np.intersect1d(np.asarray(parents).ravel(), test_idx)
    if leaked.shape[0]:
        raise ComputeError(f"leakage: {leaked.shape[0]} test rows were used as SMOTE parents")


def run_train(config: PipelineConfig, ingest: IngestState, cluster: ClusterState, n_jobs: int = 1) -> TrainState:
    """
    Cross-validate, fit and test every configured model; keep the random forest for explanation.

    The best model has the highest test accuracy; ties go to the earlier configured model.

    Deutsch:
        Kreuzvalidierung, Training und Test aller Modelle.
    """

    data = training_data(config, ingest, cluster, n_jobs)
    X_train, y_train = data.X_pool[data.train_idx], data.y_pool[data.train_idx]
    X_test, y_test = data.X_pool[data.test_idx], data.y_pool[data.test_idx]
    fold_smote = None
    if not config.smote_before_split:
        fold_smote = SmoteConfig(k_neighbors=config.smote_k_neighbors, seed=derive_seed(config.seed, STAGE_CV))
    classes = list(range(cluster.labeling.k))

    outcomes: List[ModelOutcome] = []
    forest: Optional[TrainedModel] = None
    for spec in config.model_specs():
        cv = kfold_cv(spec, X_train, y_train, folds=config.cv_folds, seed=derive_seed(config.seed, STAGE_CV),
                      smote=fold_smote, n_jobs=n_jobs)
        model = fit_classifier(spec, data.X_fit, data.y_fit, n_jobs)
        predicted, _ = predict(model, X_test)
        tested = evaluate(predicted, y_test, classes=classes)
        evaluation = replace(tested, fold_accuracies=cv.fold_accuracies, cv_mean=cv.cv_mean, cv_sd=cv.cv_sd)
        outcomes.append(ModelOutcome(kind=spec.kind, evaluation=evaluation, warnings=model.warnings))
        log.info("%s: cv %.4f ± %.4f, test %.4f", spec.kind, cv.cv_mean, cv.cv_sd, tested.test_accuracy)
        if spec.kind == FOREST_KIND:
            forest = model

    best = max(range(len(outcomes)), key=lambda index: (outcomes[index].evaluation.test_accuracy, -index))
    log.info("best model: %s", outcomes[best].kind)
    return TrainState(
        train_idx=data.train_idx,
        test_idx=data.test_idx,
        n_synthetic=data.n_synthetic,
        outcomes=tuple(outcomes),
        best_model=outcomes[best].kind,
        forest=forest,
    )


def class_label_names(cluster: ClusterState, forest: TrainedModel) -> Tuple[str, ...]:
    names = cluster.labeling.label_names
    return tuple(names[int(code)] for code in forest.classes)


def check_local_accuracy(forest: TrainedModel, X: np.ndarray, shap: ShapMatrix) -> float:
    """Largest |base + sum of attributions - forest probability| over rows and classes."""

    reconstructed = shap.base_values[None, :] + shap.values.sum(axis=1)
    gap = float(np.abs(reconstructed - forest_proba(forest, X)).max())
    if gap > LOCAL_ACCURACY_TOLERANCE:
        raise ExplainError(f"SHAP local accuracy violated by {gap:.3g}")
    return gap


def run_explain(config: PipelineConfig, ingest: IngestState, cluster: ClusterState, train: TrainState,
                n_jobs: int = 1) -> ExplainState:
    """
    MDA/MDG importances and TreeSHAP attributions of the random forest over every county.

    Deutsch:
        Wichtigkeiten und SHAP-Werte des Random Forest.
    """

    if train.forest is None:
        log.warning("no %s configured; skipping feature attribution", FOREST_KIND)
        return ExplainState(importance=None, shap=None)
    forest = train.forest
    table = ingest.table
    data = training_data(config, ingest, cluster, n_jobs)
    labels = class_label_names(cluster, forest)

    shap = tree_shap(forest, table.values, row_keys=table.row_keys, feature_names=table.column_names, n_jobs=n_jobs)
    gap = check_local_accuracy(forest, table.values, shap)
    log.debug("SHAP local accuracy gap %.3g", gap)
    summary = shap_summary(shap, table.raw_values(), table.column_names, labels)
    importance = importance_report(
        forest,
        data.X_fit,
        data.y_fit,
        table.column_names,
        repetitions=config.mda_repetitions,
        seed=derive_seed(config.seed, STAGE_EXPLAIN),
        shap_mean_abs=summary.mean_abs,
        class_labels=labels,
        n_jobs=n_jobs,
    )
    return ExplainState(importance=importance, shap=shap,
                        dependence_features=dependence_features(config, summary))


def dependence_features(config: PipelineConfig, summary: ShapSummary) -> Tuple[str, ...]:
    """Configured dependence features, else the top ones of the highest-risk class."""

    if config.shap_dependence_features is not None:
        unknown = [name for name in config.shap_dependence_features if name not in summary.feature_names]
        if unknown:
            raise ExplainError(f"shap_dependence_features not among the screened predictors: {', '.join(unknown)}")
        return tuple(config.shap_dependence_features)
    return tuple(summary.top_features(summary.class_labels[0], DEFAULT_DEPENDENCE_FEATURES))


def build_report(state: RunState) -> RunReport:
    """Assemble the run report from completed stage states."""

    ingest, cluster, train, explain = state.ingest, state.cluster, state.train, state.explain
    if ingest is None or cluster is None or train is None or explain is None:
        raise PipelineError("report", DataError("the report needs every stage to be complete"))
    summary: Optional[ShapSummary] = None
    if explain.shap is not None and train.forest is not None:
        table = ingest.table
        summary = shap_summary(explain.shap, table.raw_values(), table.column_names,
                               class_label_names(cluster, train.forest))
    return RunReport(
        config=state.config.echo(),
        dataset=ingest.summary,
        screen=ingest.screen,
        elbow=cluster.elbow,
        k=cluster.model.k,
        k_source=cluster.k_source,
        labeling=cluster.labeling,
        models=train.outcomes,
        best_model=train.best_model,
        importance=explain.importance,
        shap=summary,
        dependence_features=explain.dependence_features,
        points=build_points(ingest, cluster),
    )


def artifact_path(output_dir: Path, stage: str) -> Path:
    return Path(output_dir) / "artifacts" / f"{stage}.json"


def write_stage_artifacts(state: RunState, stage: str) -> List[Path]:
    """Cumulative stage JSON plus the CSV side files the plot command reads."""

    output_dir = state.config.output_dir
    written = [write_json_atomic(artifact_path(output_dir, stage), state.to_dict())]
    if stage == "cluster" and state.cluster is not None and state.ingest is not None:
        written.append(write_csv_atomic(output_dir / "elbow.csv", elbow_table(state.cluster.elbow)))
        points = build_points(state.ingest, state.cluster)
        written.append(write_csv_atomic(output_dir / "cluster_points.csv", points.frame()))
    return written


def build_points(ingest: IngestState, cluster: ClusterState) -> ClusterPoints:
    names = cluster.labeling.label_names
    return ClusterPoints(
        fips=tuple(record.fips for record in ingest.records),
        rates=rate_matrix(ingest.records),
        clusters=cluster.model.assignments,
        risk_labels=tuple(names[int(rank)] for rank in cluster.labels),
    )


def load_stage(path: Path, output_dir: Optional[Path] = None) -> RunState:
    """Reload a stage artifact; ``output_dir`` replaces the recorded one."""

    return RunState.from_dict(read_json(Path(path)), output_dir=output_dir)


def run_stage(state: RunState, stage: str, n_jobs: int = 1) -> RunState:
    """
    Run one stage on top of ``state``; earlier stages must be present and later ones are
    discarded.
    """

    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    state = replace(state, **{later: None for later in STAGES[STAGES.index(stage) + 1:]})
    config = state.config
    if stage == "ingest":
        return replace(state, ingest=run_ingest(config))
    if state.ingest is None:
        raise DataError(f"stage {stage} needs the ingest stage")
    if stage == "cluster":
        return replace(state, cluster=run_cluster(config, state.ingest, n_jobs))
    if state.cluster is None:
        raise DataError(f"stage {stage} needs the cluster stage")
    if stage == "train":
        return replace(state, train=run_train(config, state.ingest, state.cluster, n_jobs))
    if state.train is None:
        raise DataError(f"stage {stage} needs the train stage")
    return replace(state, explain=run_explain(config, state.ingest, state.cluster, state.train, n_jobs))


def execute_stages(state: RunState, stages: Tuple[str, ...], n_jobs: int = 1,
                   written: Optional[List[Path]] = None) -> RunState:
    """Run ``stages`` in order, writing each artifact; failures become PipelineError."""

    written = written if written is not None else []
    for stage in stages:
        try:
            state = run_stage(state, stage, n_jobs)
            written.extend(write_stage_artifacts(state, stage))
        except PipelineError:
            raise
        except (RiskLabError, ValueError) as exc:
            raise PipelineError(stage, exc, tuple(written)) from exc
    return state


def run_pipeline(config: PipelineConfig, resume_from: Optional[Path] = None, n_jobs: int = 1) -> RunReport:
    """
    Run every remaining stage and write the report files to ``config.output_dir``.

    With ``resume_from`` the run continues after the stage stored in that artifact; the
    artifact's own config is used, with this config's output directory.

    Deutsch:
        Führt alle (restlichen) Stufen aus und schreibt Bericht und Grafiken.
    """

    if resume_from is not None:
        state = load_stage(resume_from, output_dir=config.output_dir)
        done = state.completed
        remaining = STAGES[STAGES.index(done) + 1:] if done is not None else STAGES
        log.info("resuming after stage %s from %s", done, resume_from)
    else:
        state = RunState(config=config)
        remaining = STAGES
    written: List[Path] = []
    state = execute_stages(state, remaining, n_jobs, written)
    report = build_report(state)
    try:
        write_report(report, state.config.output_dir, emit_plots=state.config.emit_plots)
    except RiskLabError as exc:
        raise PipelineError("report", exc, tuple(written)) from exc
    return report
