"""
k-nearest-neighbor classifier with optional k selection by inner cross-validation.

Deutsch:
    k-Nächste-Nachbarn mit optionaler Wahl von k per innerer Kreuzvalidierung.
"""

from __future__ import annotations

import logging
from typing import Any, List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from ..models import ModelSpec, TrainedModel
from ..randomness import STAGE_MODEL, derive_seed
from . import BaseClassifier, LearnError, encode_labels, register
from .validation import stratified_folds

log = logging.getLogger(__name__)


def knn_vote(
    X_train: np.ndarray, codes: np.ndarray, n_classes: int, X: np.ndarray, k: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Majority vote of the k nearest training rows (distance ties go to the lower row index).

    Vote ties are broken by the class of the nearest neighbor among the tied classes.
    Returns class codes and vote fractions.
    """

    k = min(k, X_train.shape[0])
    nearest = np.argsort(cdist(X, X_train), axis=1, kind="stable")[:, :k]
    neighbor_codes = codes[nearest]
    rows = np.arange(X.shape[0])
    votes = np.zeros((X.shape[0], n_classes))
    for column in range(k):
        votes[rows, neighbor_codes[:, column]] += 1.0
    tied = votes == votes.max(axis=1, keepdims=True)
    first_tied = np.argmax(tied[rows[:, None], neighbor_codes], axis=1)
    return neighbor_codes[rows, first_tied], votes / k


class NearestNeighbors(BaseClassifier):
    kind = "KNN"
    defaults = {"k": 5, "k_grid": None, "inner_folds": 5}

    def check(self, name: str, value: Any) -> Optional[str]:
        if name == "k" and not (isinstance(value, int) and value >= 1):
            return "must be an integer >= 1"
        if name == "k_grid" and value is not None:
            if not isinstance(value, (list, tuple)) or not value:
                return "must be a non-empty list of integers"
            if not all(isinstance(item, int) and item >= 1 for item in value):
                return "entries must be integers >= 1"
        if name == "inner_folds" and not (isinstance(value, int) and value >= 2):
            return "must be an integer >= 2"
        return None

    def fit(self, spec: ModelSpec, X: np.ndarray, y: np.ndarray, n_jobs: int = 1) -> TrainedModel:
        params = self.resolve(spec.hyperparameters)
        classes, codes = encode_labels(y)
        k = int(params["k"])
        grid_scores: List[float] = []
        grid = sorted(set(params["k_grid"])) if params["k_grid"] else []
        if grid:
            k, grid_scores = self._select_k(X, codes, classes.shape[0], grid, params["inner_folds"], spec.seed)
            log.info("KNN inner CV selected k=%d from %s", k, grid)
        return TrainedModel(
            kind=self.kind,
            classes=classes,
            n_features=X.shape[1],
            params={
                "X_train": X.copy(),
                "codes": codes.astype(np.int64),
                "k": k,
                "k_grid": list(grid),
                "grid_scores": grid_scores,
            },
        )

    def _select_k(
        self, X: np.ndarray, codes: np.ndarray, n_classes: int, grid: List[int], folds: int, seed: int
    ) -> Tuple[int, List[float]]:
        try:
            test_sets = stratified_folds(codes, folds, derive_seed(seed, STAGE_MODEL))
        except LearnError as exc:
            raise LearnError(f"KNN k_grid selection: {exc}") from exc
        scores = []
        for k in grid:
            accuracies = []
            for test in test_sets:
                train = np.setdiff1d(np.arange(X.shape[0]), test)
                predicted, _ = knn_vote(X[train], codes[train], n_classes, X[test], k)
                accuracies.append(float((predicted == codes[test]).mean()))
            scores.append(float(np.mean(accuracies)))
        best = max(range(len(grid)), key=lambda index: (scores[index], -grid[index]))
        return grid[best], scores

    def predict(self, model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        codes, fractions = knn_vote(
            np.asarray(model.params["X_train"]),
            np.asarray(model.params["codes"]),
            model.n_classes,
            X,
            int(model.params["k"]),
        )
        return model.classes[codes], fractions


register(NearestNeighbors())
