"""
Shared data models for the risklab pipeline.

Deutsch:
    Gemeinsame Datenmodelle für Ingest, Clustering, Klassifikation und Erklärung.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

CLIMATE_ZONES: Tuple[str, ...] = (
    "hot-humid",
    "mixed-humid",
    "hot-dry",
    "mixed-dry",
    "cold",
    "very-cold",
    "subarctic",
    "marine",
)

CSV_HEADER: Tuple[str, ...] = (
    "fips",
    "county",
    "state",
    "population",
    "positive_cases",
    "deaths",
    "longitude",
    "latitude",
    "pct_rural",
    "climate_zone",
    "icu_beds_per_10k",
    "pct_smokers",
    "pct_obesity",
    "pct_uninsured",
    "pct_diabetes",
    "pct_elderly",
    "pct_nonwhite",
    "pct_poverty",
    "pop_density",
)

# Percent fields that may be MISSING in the input and are imputed by state mean.
IMPUTABLE_PERCENT_FIELDS: Tuple[str, ...] = (
    "pct_smokers",
    "pct_obesity",
    "pct_uninsured",
    "pct_diabetes",
    "pct_elderly",
    "pct_nonwhite",
    "pct_poverty",
)

PERCENT_FIELDS: Tuple[str, ...] = ("pct_rural",) + IMPUTABLE_PERCENT_FIELDS

PREDICTOR_FIELDS: Tuple[str, ...] = (
    "longitude",
    "latitude",
    "pct_rural",
    "climate_zone",
    "icu_beds_per_10k",
    "pct_smokers",
    "pct_obesity",
    "pct_uninsured",
    "pct_diabetes",
    "pct_elderly",
    "pct_nonwhite",
    "pct_poverty",
    "pop_density",
)


def _floats(values: Any) -> List[Any]:
    return np.asarray(values, dtype=np.float64).tolist()


def _ints(values: Any) -> List[Any]:
    return np.asarray(values, dtype=np.int64).tolist()


@dataclass(frozen=True)
class CountyRecord:
    """
    One county row of the combined table.

    Deutsch:
        Eine Landkreis-Zeile der kombinierten Tabelle.
    """

    fips: str
    county_name: str
    state: str
    population: int
    positive_cases: int
    deaths: int
    longitude: float
    latitude: float
    pct_rural: float
    climate_zone: Optional[str]
    icu_beds_per_10k: float
    pct_smokers: Optional[float]
    pct_obesity: Optional[float]
    pct_uninsured: Optional[float]
    pct_diabetes: Optional[float]
    pct_elderly: Optional[float]
    pct_nonwhite: Optional[float]
    pct_poverty: Optional[float]
    pop_density: float

    def missing_fields(self) -> List[str]:
        missing = [name for name in IMPUTABLE_PERCENT_FIELDS if getattr(self, name) is None]
        if self.climate_zone is None:
            missing.append("climate_zone")
        return missing

    def to_dict(self) -> Dict[str, Any]:
        return {item.name: getattr(self, item.name) for item in fields(self)}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "CountyRecord":
        return cls(**{item.name: payload[item.name] for item in fields(cls)})


@dataclass(frozen=True)
class TargetRates:
    positive_rate: float
    death_rate: float


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """
    Standardized predictor matrix with the statistics needed to transform held-out rows.

    Deutsch:
        Standardisierte Prädiktormatrix inklusive Mittelwerten und Standardabweichungen.
    """

    column_names: Tuple[str, ...]
    values: np.ndarray
    col_means: np.ndarray
    col_sds: np.ndarray
    row_keys: Tuple[str, ...]
    dropped_constant: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def p(self) -> int:
        return int(self.values.shape[1])

    def transform(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=np.float64) - self.col_means) / self.col_sds

    def inverse_transform(self, standardized: np.ndarray) -> np.ndarray:
        return np.asarray(standardized, dtype=np.float64) * self.col_sds + self.col_means

    def raw_values(self) -> np.ndarray:
        return self.inverse_transform(self.values)

    def select(self, columns: Sequence[str]) -> "FeatureTable":
        index = [self.column_names.index(name) for name in columns]
        return FeatureTable(
            column_names=tuple(columns),
            values=self.values[:, index].copy(),
            col_means=self.col_means[index].copy(),
            col_sds=self.col_sds[index].copy(),
            row_keys=self.row_keys,
            dropped_constant=self.dropped_constant,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "column_names": list(self.column_names),
            "values": _floats(self.values),
            "col_means": _floats(self.col_means),
            "col_sds": _floats(self.col_sds),
            "row_keys": list(self.row_keys),
            "dropped_constant": list(self.dropped_constant),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "FeatureTable":
        names = tuple(payload["column_names"])
        values = np.asarray(payload["values"], dtype=np.float64).reshape(len(payload["row_keys"]), len(names))
        return cls(
            column_names=names,
            values=values,
            col_means=np.asarray(payload["col_means"], dtype=np.float64),
            col_sds=np.asarray(payload["col_sds"], dtype=np.float64),
            row_keys=tuple(payload["row_keys"]),
            dropped_constant=tuple(payload.get("dropped_constant", ())),
        )


@dataclass(frozen=True, eq=False)
class KMeansModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    sse: float
    iterations: int
    seed: int
    restarts_used: int

    def predict(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        distances = ((points[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(distances, axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "centroids": _floats(self.centroids),
            "assignments": _ints(self.assignments),
            "sse": float(self.sse),
            "iterations": self.iterations,
            "seed": self.seed,
            "restarts_used": self.restarts_used,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "KMeansModel":
        return cls(
            k=int(payload["k"]),
            centroids=np.asarray(payload["centroids"], dtype=np.float64),
            assignments=np.asarray(payload["assignments"], dtype=np.int64),
            sse=float(payload["sse"]),
            iterations=int(payload["iterations"]),
            seed=int(payload["seed"]),
            restarts_used=int(payload["restarts_used"]),
        )


@dataclass(frozen=True)
class ClusterStats:
    cluster: int
    rank: int
    label: str
    count: int
    mean_positive_rate: float
    sd_positive_rate: float
    mean_death_rate: float
    sd_death_rate: float
    positive_quartiles: Tuple[float, ...]
    death_quartiles: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        payload = {item.name: getattr(self, item.name) for item in fields(self)}
        payload["positive_quartiles"] = list(self.positive_quartiles)
        payload["death_quartiles"] = list(self.death_quartiles)
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ClusterStats":
        data = dict(payload)
        data["positive_quartiles"] = tuple(data["positive_quartiles"])
        data["death_quartiles"] = tuple(data["death_quartiles"])
        return cls(**data)


@dataclass(frozen=True)
class RiskLabeling:
    """
    Cluster to risk-rank mapping; rank 1 is the highest risk.

    Deutsch:
        Zuordnung Cluster → Risikorang (1 = höchstes Risiko).
    """

    rank_of_cluster: Tuple[int, ...]
    stats: Tuple[ClusterStats, ...]

    @property
    def k(self) -> int:
        return len(self.rank_of_cluster)

    @property
    def label_names(self) -> Tuple[str, ...]:
        by_rank = sorted(self.stats, key=lambda item: item.rank)
        return tuple(item.label for item in by_rank)

    def labels_for(self, assignments: np.ndarray) -> np.ndarray:
        ranks = np.asarray(self.rank_of_cluster, dtype=np.int64)
        return ranks[np.asarray(assignments, dtype=np.int64)] - 1

    def stats_by_rank(self) -> List[ClusterStats]:
        return sorted(self.stats, key=lambda item: item.rank)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rank_of_cluster": list(self.rank_of_cluster),
            "stats": [item.to_dict() for item in self.stats],
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "RiskLabeling":
        return cls(
            rank_of_cluster=tuple(int(item) for item in payload["rank_of_cluster"]),
            stats=tuple(ClusterStats.from_dict(item) for item in payload["stats"]),
        )


@dataclass(frozen=True)
class ModelSpec:
    """
    Classifier kind plus hyperparameters and seed.

    Deutsch:
        Klassifikator-Art mit Hyperparametern und Seed.
    """

    kind: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def param(self, name: str, default: Any = None) -> Any:
        return self.hyperparameters.get(name, default)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters), "seed": self.seed}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ModelSpec":
        return cls(
            kind=str(payload["kind"]),
            hyperparameters=dict(payload.get("hyperparameters") or {}),
            seed=int(payload.get("seed", 0)),
        )


@dataclass(frozen=True, eq=False)
class Tree:
    """
    Array-of-nodes decision tree. Leaves have ``feature == -1`` and ``left == right == -1``.

    ``n_samples`` is the node cover (bootstrap rows, duplicates counted), ``value`` holds
    the class fractions of every node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    impurity_decrease: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def is_leaf(self, node: int) -> bool:
        return int(self.left[node]) == -1

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.left[nodes] != -1
        while active.any():
            current = nodes[active]
            go_left = X[rows[active], self.feature[current]] <= self.threshold[current]
            nodes[active] = np.where(go_left, self.left[current], self.right[current])
            active = self.left[nodes] != -1
        return nodes

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.left[node] != -1:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max()) if self.n_nodes else 0

    def expected_value(self) -> np.ndarray:
        leaves = self.left == -1
        weights = self.n_samples[leaves] / self.n_samples[0]
        return (weights[:, None] * self.value[leaves]).sum(axis=0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature": _ints(self.feature),
            "threshold": _floats(self.threshold),
            "left": _ints(self.left),
            "right": _ints(self.right),
            "n_samples": _floats(self.n_samples),
            "impurity": _floats(self.impurity),
            "impurity_decrease": _floats(self.impurity_decrease),
            "value": _floats(self.value),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "Tree":
        return cls(
            feature=np.asarray(payload["feature"], dtype=np.int64),
            threshold=np.asarray(payload["threshold"], dtype=np.float64),
            left=np.asarray(payload["left"], dtype=np.int64),
            right=np.asarray(payload["right"], dtype=np.int64),
            n_samples=np.asarray(payload["n_samples"], dtype=np.float64),
            impurity=np.asarray(payload["impurity"], dtype=np.float64),
            impurity_decrease=np.asarray(payload["impurity_decrease"], dtype=np.float64),
            value=np.asarray(payload["value"], dtype=np.float64),
        )


TRAINED_MODEL_SCHEMA = "risklab.trained-model/1"


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """
    Fitted classifier of any kind.

    ``params`` holds the per-kind parameter arrays; forests additionally keep their trees
    and per-tree out-of-bag row indices.

    Deutsch:
        Trainiertes Modell beliebiger Art mit den gelernten Parametern.
    """

    kind: str
    classes: np.ndarray
    n_features: int
    params: Mapping[str, Any] = field(default_factory=dict)
    trees: Tuple[Tree, ...] = ()
    oob_indices: Tuple[np.ndarray, ...] = ()
    warnings: Tuple[str, ...] = ()

    @property
    def n_classes(self) -> int:
        return int(self.classes.shape[0])

    def to_dict(self) -> Dict[str, Any]:
        params: Dict[str, Any] = {}
        for key, value in self.params.items():
            if isinstance(value, np.ndarray):
                params[key] = {"dtype": str(value.dtype), "shape": list(value.shape), "data": value.ravel().tolist()}
            else:
                params[key] = value
        return {
            "schema": TRAINED_MODEL_SCHEMA,
            "kind": self.kind,
            "classes": _ints(self.classes),
            "n_features": self.n_features,
            "params": params,
            "trees": [tree.to_dict() for tree in self.trees],
            "oob_indices": [_ints(item) for item in self.oob_indices],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "TrainedModel":
        if payload.get("schema") != TRAINED_MODEL_SCHEMA:
            raise ValueError(f"unsupported model document {payload.get('schema')!r}")
        params: Dict[str, Any] = {}
        for key, value in payload.get("params", {}).items():
            if isinstance(value, dict) and {"dtype", "shape", "data"} <= set(value):
                params[key] = np.asarray(value["data"], dtype=value["dtype"]).reshape(value["shape"])
            else:
                params[key] = value
        return cls(
            kind=str(payload["kind"]),
            classes=np.asarray(payload["classes"], dtype=np.int64),
            n_features=int(payload["n_features"]),
            params=params,
            trees=tuple(Tree.from_dict(item) for item in payload.get("trees", [])),
            oob_indices=tuple(np.asarray(item, dtype=np.int64) for item in payload.get("oob_indices", [])),
            warnings=tuple(payload.get("warnings", [])),
        )


@dataclass(frozen=True)
class EvalReport:
    """
    Cross-validation and test metrics of one model.

    Deutsch:
        Kreuzvalidierungs- und Testmetriken eines Modells.
    """

    classes: Tuple[int, ...]
    fold_accuracies: Tuple[float, ...] = ()
    cv_mean: Optional[float] = None
    cv_sd: Optional[float] = None
    test_accuracy: Optional[float] = None
    confusion: Optional[Tuple[Tuple[int, ...], ...]] = None
    precision: Optional[Tuple[float, ...]] = None
    recall: Optional[Tuple[float, ...]] = None
    zero_division: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "classes": list(self.classes),
            "fold_accuracies": list(self.fold_accuracies),
            "cv_mean": self.cv_mean,
            "cv_sd": self.cv_sd,
            "test_accuracy": self.test_accuracy,
            "confusion": [list(row) for row in self.confusion] if self.confusion is not None else None,
            "precision": list(self.precision) if self.precision is not None else None,
            "recall": list(self.recall) if self.recall is not None else None,
            "zero_division": list(self.zero_division),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "EvalReport":
        confusion = payload.get("confusion")
        precision = payload.get("precision")
        recall = payload.get("recall")
        return cls(
            classes=tuple(payload["classes"]),
            fold_accuracies=tuple(payload.get("fold_accuracies", ())),
            cv_mean=payload.get("cv_mean"),
            cv_sd=payload.get("cv_sd"),
            test_accuracy=payload.get("test_accuracy"),
            confusion=tuple(tuple(row) for row in confusion) if confusion is not None else None,
            precision=tuple(precision) if precision is not None else None,
            recall=tuple(recall) if recall is not None else None,
            zero_division=tuple(payload.get("zero_division", ())),
        )


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    """
    Per-feature importances under MDA, MDG and mean |SHAP| (per class).

    Ranks are 1-based; rank 1 is the most important feature.
    """

    feature_names: Tuple[str, ...]
    mda_mean: np.ndarray
    mda_sd: np.ndarray
    mdg: np.ndarray
    mda_rank: np.ndarray
    mdg_rank: np.ndarray
    class_labels: Tuple[str, ...] = ()
    shap_mean_abs: Optional[np.ndarray] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature_names": list(self.feature_names),
            "mda_mean": _floats(self.mda_mean),
            "mda_sd": _floats(self.mda_sd),
            "mdg": _floats(self.mdg),
            "mda_rank": _ints(self.mda_rank),
            "mdg_rank": _ints(self.mdg_rank),
            "class_labels": list(self.class_labels),
            "shap_mean_abs": _floats(self.shap_mean_abs) if self.shap_mean_abs is not None else None,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ImportanceReport":
        shap = payload.get("shap_mean_abs")
        return cls(
            feature_names=tuple(payload["feature_names"]),
            mda_mean=np.asarray(payload["mda_mean"], dtype=np.float64),
            mda_sd=np.asarray(payload["mda_sd"], dtype=np.float64),
            mdg=np.asarray(payload["mdg"], dtype=np.float64),
            mda_rank=np.asarray(payload["mda_rank"], dtype=np.int64),
            mdg_rank=np.asarray(payload["mdg_rank"], dtype=np.int64),
            class_labels=tuple(payload.get("class_labels", ())),
            shap_mean_abs=np.asarray(shap, dtype=np.float64) if shap is not None else None,
        )


@dataclass(frozen=True, eq=False)
class ShapMatrix:
    """
    Attributions on the class-probability scale: ``values`` is n × p × K.

    Local accuracy: ``base_values[c] + values[i, :, c].sum()`` equals the forest probability.
    """

    values: np.ndarray
    base_values: np.ndarray
    feature_names: Tuple[str, ...] = ()
    row_keys: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "shape": list(self.values.shape),
            "values": self.values.ravel().tolist(),
            "base_values": _floats(self.base_values),
            "feature_names": list(self.feature_names),
            "row_keys": list(self.row_keys),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ShapMatrix":
        return cls(
            values=np.asarray(payload["values"], dtype=np.float64).reshape(payload["shape"]),
            base_values=np.asarray(payload["base_values"], dtype=np.float64),
            feature_names=tuple(payload.get("feature_names", ())),
            row_keys=tuple(payload.get("row_keys", ())),
        )
