"""
Pipeline configuration: loading, validation and defaults.

Deutsch:
    Laden und Prüfen der Pipeline-Konfiguration.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from .errors import ConfigError
from .ingest import DEFAULT_CORRELATION_THRESHOLD
from .learn import MODEL_KINDS, get_classifier
from .models import ModelSpec
from .randomness import STAGE_MODEL, derive_seed
from .schemas import schema_errors

log = logging.getLogger(__name__)

CONFIG_SCHEMA = "pipeline_config.schema.json"
SEED_ENV = "RISKLAB_SEED"
K_LIMIT = 50


@dataclass(frozen=True)
class ModelEntry:
    kind: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters)}


def default_model_roster() -> Tuple[ModelEntry, ...]:
    """The eight compared classifier kinds with default hyperparameters."""

    return tuple(ModelEntry(kind=kind) for kind in MODEL_KINDS)


@dataclass(frozen=True)
class PipelineConfig:
    """
    Every knob of one pipeline run. Field names match the JSON keys exactly.

    Deutsch:
        Alle Einstellungen eines Pipeline-Laufs; Feldnamen entsprechen den JSON-Schlüsseln.
    """

    input_path: Path
    output_dir: Path
    seed: int = 0
    correlation_threshold: float = DEFAULT_CORRELATION_THRESHOLD
    k_range: Tuple[int, int] = (1, 10)
    k_override: Optional[int] = None
    standardize_cluster_features: bool = False
    smote_before_split: bool = False
    test_fraction: float = 0.2
    cv_folds: int = 10
    models: Tuple[ModelEntry, ...] = field(default_factory=default_model_roster)
    climate_one_hot: bool = False
    smote_k_neighbors: int = 5
    kmeans_restarts: int = 10
    mda_repetitions: int = 5
    emit_plots: bool = True
    shap_dependence_features: Optional[Tuple[str, ...]] = None

    def model_specs(self) -> List[ModelSpec]:
        """One spec per configured model; seeds derive from the master seed and list position."""

        return [
            ModelSpec(kind=entry.kind, hyperparameters=dict(entry.hyperparameters),
                      seed=derive_seed(self.seed, STAGE_MODEL, position))
            for position, entry in enumerate(self.models)
        ]

    def echo(self) -> Dict[str, Any]:
        """
        Config as recorded in reports. ``output_dir`` is left out and the input is named by
        file name only, so a report does not depend on where it was written.
        """

        payload = self.to_dict()
        payload.pop("output_dir")
        payload["input_path"] = self.input_path.name
        return payload

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_path": str(self.input_path),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "correlation_threshold": self.correlation_threshold,
            "k_range": list(self.k_range),
            "k_override": self.k_override,
            "standardize_cluster_features": self.standardize_cluster_features,
            "smote_before_split": self.smote_before_split,
            "test_fraction": self.test_fraction,
            "cv_folds": self.cv_folds,
            "models": [entry.to_dict() for entry in self.models],
            "climate_one_hot": self.climate_one_hot,
            "smote_k_neighbors": self.smote_k_neighbors,
            "kmeans_restarts": self.kmeans_restarts,
            "mda_repetitions": self.mda_repetitions,
            "emit_plots": self.emit_plots,
            "shap_dependence_features": (
                list(self.shap_dependence_features) if self.shap_dependence_features is not None else None
            ),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], base_dir: Optional[Path] = None) -> "PipelineConfig":
        """
        Validate ``payload`` and build a config; relative paths resolve against ``base_dir``.

        Deutsch:
            Prüft die Rohdaten gegen das Schema und erzeugt die Konfiguration.
        """

        if not isinstance(payload, Mapping):
            raise ConfigError("config must be a JSON object")
        problems = schema_errors(dict(payload), CONFIG_SCHEMA)
        if problems:
            raise ConfigError("invalid config: " + "; ".join(problems))

        base = Path(base_dir) if base_dir is not None else Path(".")
        models_raw = payload.get("models")
        models = default_model_roster() if models_raw is None else tuple(
            ModelEntry(kind=str(item["kind"]), hyperparameters=dict(item.get("hyperparameters") or {}))
            for item in models_raw
        )
        dependence = payload.get("shap_dependence_features")
        config = cls(
            input_path=_resolve(base, payload["input_path"]),
            output_dir=_resolve(base, payload["output_dir"]),
            seed=int(payload.get("seed", 0)),
            correlation_threshold=float(payload.get("correlation_threshold", DEFAULT_CORRELATION_THRESHOLD)),
            k_range=tuple(payload.get("k_range", (1, 10))),  # type: ignore[arg-type]
            k_override=payload.get("k_override"),
            standardize_cluster_features=bool(payload.get("standardize_cluster_features", False)),
            smote_before_split=bool(payload.get("smote_before_split", False)),
            test_fraction=float(payload.get("test_fraction", 0.2)),
            cv_folds=int(payload.get("cv_folds", 10)),
            models=models,
            climate_one_hot=bool(payload.get("climate_one_hot", False)),
            smote_k_neighbors=int(payload.get("smote_k_neighbors", 5)),
            kmeans_restarts=int(payload.get("kmeans_restarts", 10)),
            mda_repetitions=int(payload.get("mda_repetitions", 5)),
            emit_plots=bool(payload.get("emit_plots", True)),
            shap_dependence_features=tuple(dependence) if dependence is not None else None,
        )
        config.validate()
        return config

    def validate(self) -> None:
        """Semantic checks the schema cannot express; raises ConfigError."""

        low, high = self.k_range
        if not 1 <= low <= high <= K_LIMIT:
            raise ConfigError(f"k_range must satisfy 1 <= min <= max <= {K_LIMIT}, got {list(self.k_range)}")
        if self.k_override is not None and not 1 <= self.k_override <= K_LIMIT:
            raise ConfigError(f"k_override must lie in [1, {K_LIMIT}], got {self.k_override}")
        if not 0.0 < self.correlation_threshold <= 1.0:
            raise ConfigError(f"correlation_threshold must lie in (0, 1], got {self.correlation_threshold}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.cv_folds < 2:
            raise ConfigError(f"cv_folds must be >= 2, got {self.cv_folds}")
        seen: set[str] = set()
        for entry in self.models:
            if entry.kind in seen:
                raise ConfigError(f"model kind {entry.kind} listed twice")
            seen.add(entry.kind)
            try:
                classifier = get_classifier(entry.kind)
            except KeyError as exc:
                raise ConfigError(f"unknown model kind {entry.kind!r}") from exc
            classifier.resolve(entry.hyperparameters)


def _resolve(base: Path, value: Any) -> Path:
    path = Path(str(value))
    return path if path.is_absolute() else base / path


def load_config(path: Path, seed_override: Optional[int] = None) -> PipelineConfig:
    """
    Read a JSON (or YAML) config file, apply ``RISKLAB_SEED`` and validate it.

    Deutsch:
        Liest eine Konfigurationsdatei und wendet ``RISKLAB_SEED`` an.
    """

    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid JSON/YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain an object")
    config = PipelineConfig.from_dict(data, base_dir=path.parent)
    return apply_seed_override(config, seed_override)


def apply_seed_override(config: PipelineConfig, seed_override: Optional[int] = None) -> PipelineConfig:
    """An explicit override wins over ``RISKLAB_SEED``, which wins over the config value."""

    if seed_override is not None:
        return replace(config, seed=int(seed_override))
    raw = os.environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return config
    try:
        seed = int(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be a non-negative integer, got {raw!r}") from exc
    if seed < 0:
        raise ConfigError(f"{SEED_ENV} must be a non-negative integer, got {raw!r}")
    log.info("seed %d taken from %s", seed, SEED_ENV)
    return replace(config, seed=seed)
