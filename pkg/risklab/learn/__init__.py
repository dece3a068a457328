"""
Classifier registry with a uniform fit/predict contract.

Deutsch:
    Klassifikator-Registry mit einheitlichem fit/predict-Vertrag.
"""

from __future__ import annotations

from importlib import import_module
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import ComputeError, ConfigError
from ..models import ModelSpec, TrainedModel

MODEL_KINDS: Tuple[str, ...] = (
    "MLR",
    "LDA",
    "QDA",
    "KNN",
    "SVM_LINEAR",
    "SVM_RBF",
    "SVM_POLY",
    "RANDOM_FOREST",
)


class LearnError(ComputeError):
    """Raised when a classifier cannot be fitted or applied. / Klassifikator-Fehler."""


class BaseClassifier:
    """
    Base class for all classifier kinds.

    ``defaults`` lists every accepted hyperparameter; ``check`` validates a value.

    Deutsch:
        Basisklasse für alle Klassifikator-Arten.
    """

    kind = "base"
    probabilistic = True
    defaults: Mapping[str, Any] = {}

    def fit(self, spec: ModelSpec, X: np.ndarray, y: np.ndarray, n_jobs: int = 1) -> TrainedModel:  # pragma: no cover
        raise NotImplementedError

    def predict(self, model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        raise NotImplementedError

    def check(self, name: str, value: Any) -> Optional[str]:
        return None

    def resolve(self, hyperparameters: Mapping[str, Any]) -> Dict[str, Any]:
        unknown = sorted(set(hyperparameters) - set(self.defaults))
        if unknown:
            raise ConfigError(f"{self.kind}: unknown hyperparameters {', '.join(unknown)}")
        resolved = dict(self.defaults)
        resolved.update(hyperparameters)
        for name, value in resolved.items():
            problem = self.check(name, value)
            if problem:
                raise ConfigError(f"{self.kind}: {name} {problem}")
        return resolved


_REGISTRY: Dict[str, BaseClassifier] = {}
_BOOTSTRAPPED = False


def register(classifier: BaseClassifier) -> None:
    _REGISTRY[classifier.kind] = classifier


def get_classifier(kind: str) -> BaseClassifier:
    _ensure_bootstrapped()
    classifier = _REGISTRY.get(kind)
    if not classifier:
        raise KeyError(f"classifier {kind} not registered")
    return classifier


def list_kinds() -> List[str]:
    _ensure_bootstrapped()
    return sorted(_REGISTRY.keys())


def _ensure_bootstrapped() -> None:
    global _BOOTSTRAPPED
    if not _BOOTSTRAPPED:
        _bootstrap()
        _BOOTSTRAPPED = True


def _bootstrap() -> None:
    # Import modules to trigger registration side effects.
    package = __name__
    for module in ("linear", "discriminant", "neighbors", "svm", "forest"):
        import_module(f"{package}.{module}")


def fit_classifier(spec: ModelSpec, X: np.ndarray, y: np.ndarray, n_jobs: int = 1) -> TrainedModel:
    """
    Fit ``spec`` on standardized ``X`` and integer labels ``y``.

    Deutsch:
        Trainiert das durch ``spec`` beschriebene Modell.
    """

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise LearnError(f"{spec.kind}: X and y must have matching rows")
    if not np.isfinite(X).all():
        raise LearnError(f"{spec.kind}: training matrix contains non-finite values")
    if np.unique(y).shape[0] < 2:
        raise LearnError(f"{spec.kind}: at least two classes are required")
    try:
        classifier = get_classifier(spec.kind)
    except KeyError as exc:
        raise LearnError(str(exc)) from exc
    return classifier.fit(spec, X, y, n_jobs)


def predict(model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Predict labels and, for probabilistic kinds, class probabilities (columns follow ``model.classes``).
    """

    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        width = X.shape[1] if X.ndim == 2 else "?"
        raise LearnError(f"{model.kind}: dimension mismatch, model expects {model.n_features} columns, got {width}")
    return get_classifier(model.kind).predict(model, X)


def encode_labels(y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted class values and the position of every label among them."""

    classes = np.unique(y)
    return classes, np.searchsorted(classes, y)


def labels_from_scores(model: TrainedModel, scores: np.ndarray) -> np.ndarray:
    return model.classes[np.argmax(scores, axis=1)]
