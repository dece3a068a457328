"""
Stratified splitting, k-fold cross-validation and test-set evaluation.

Deutsch:
    Stratifizierte Aufteilung, k-fache Kreuzvalidierung und Testauswertung.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..balance import SmoteConfig, smote_oversample
from ..models import EvalReport, ModelSpec
from ..parallel import map_ordered
from ..randomness import STAGE_CV, STAGE_SPLIT, derive_rng, derive_seed
from . import LearnError, fit_classifier, predict

log = logging.getLogger(__name__)


def stratified_split(
    X: Optional[np.ndarray], y: np.ndarray, test_fraction: float = 0.2, seed: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per class, ``round(count * test_fraction)`` rows (half rounds up, at least one, never
    all) go to the test set. Returns sorted train and test row indices.

    Deutsch:
        Stratifizierte Train/Test-Aufteilung mit festem Seed.
    """

    y = np.asarray(y)
    if X is not None and np.asarray(X).shape[0] != y.shape[0]:
        raise LearnError("X and y must have matching rows")
    if not 0.0 < test_fraction < 1.0:
        raise LearnError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    test: List[np.ndarray] = []
    for position, label in enumerate(np.unique(y)):
        members = np.flatnonzero(y == label)
        if members.shape[0] < 2:
            raise LearnError(f"class {label} has fewer than 2 samples; cannot split")
        n_test = int(math.floor(members.shape[0] * test_fraction + 0.5))
        n_test = min(max(n_test, 1), members.shape[0] - 1)
        rng = derive_rng(seed, STAGE_SPLIT, position)
        test.append(rng.permutation(members)[:n_test])
    test_idx = np.sort(np.concatenate(test))
    train_idx = np.setdiff1d(np.arange(y.shape[0]), test_idx)
    return train_idx, test_idx


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> List[np.ndarray]:
    """
    Held-out row indices of each fold. Rows of every class are shuffled with a seeded
    generator and dealt round-robin, continuing where the previous class stopped.
    """

    y = np.asarray(y)
    if folds < 2:
        raise LearnError(f"folds must be >= 2, got {folds}")
    assignment = np.empty(y.shape[0], dtype=np.int64)
    offset = 0
    for position, label in enumerate(np.unique(y)):
        members = np.flatnonzero(y == label)
        if members.shape[0] < folds:
            raise LearnError(f"class {label} has {members.shape[0]} samples, fewer than {folds} folds")
        shuffled = derive_rng(seed, STAGE_CV, position).permutation(members)
        assignment[shuffled] = (np.arange(shuffled.shape[0]) + offset) % folds
        offset = (offset + shuffled.shape[0]) % folds
    return [np.flatnonzero(assignment == fold) for fold in range(folds)]


def kfold_cv(
    spec: ModelSpec,
    X: np.ndarray,
    y: np.ndarray,
    folds: int = 10,
    seed: int = 0,
    smote: Optional[SmoteConfig] = None,
    n_jobs: int = 1,
) -> EvalReport:
    """
    Stratified k-fold accuracy of ``spec``. With ``smote`` the training folds (and only
    those) are oversampled before fitting.

    Deutsch:
        Stratifizierte k-fache Kreuzvalidierung, optional mit SMOTE nur auf Trainingsfalten.
    """

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    held_out = stratified_folds(y, folds, seed)
    everything = np.arange(y.shape[0])

    def _run(fold: int) -> float:
        test = held_out[fold]
        train = np.setdiff1d(everything, test)
        X_fit, y_fit = X[train], y[train]
        if smote is not None:
            balanced = smote_oversample(X_fit, y_fit, replace(smote, seed=derive_seed(smote.seed, STAGE_CV, fold)))
            X_fit, y_fit = balanced.X, balanced.y
        fold_spec = replace(spec, seed=derive_seed(spec.seed, STAGE_CV, fold))
        model = fit_classifier(fold_spec, X_fit, y_fit)
        predicted, _ = predict(model, X[test])
        return float((predicted == y[test]).mean())

    accuracies = map_ordered(_run, range(folds), n_jobs)
    mean = float(np.mean(accuracies))
    sd = float(np.std(accuracies, ddof=1))
    log.info("%s: %d-fold CV accuracy %.4f ± %.4f", spec.kind, folds, mean, sd)
    return EvalReport(
        classes=tuple(int(label) for label in np.unique(y)),
        fold_accuracies=tuple(accuracies),
        cv_mean=mean,
        cv_sd=sd,
    )


def evaluate(predicted: np.ndarray, truth: np.ndarray, classes: Optional[Sequence[int]] = None) -> EvalReport:
    """
    Accuracy, confusion matrix (rows = truth) and per-class precision/recall.

    A zero denominator yields 0 and an entry ``precision:<class>`` or ``recall:<class>``
    in ``zero_division``.
    """

    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape[0] == 0:
        raise LearnError("cannot evaluate an empty prediction set")
    if predicted.shape != truth.shape:
        raise LearnError("predicted and true labels differ in length")
    labels = np.asarray(sorted(classes) if classes is not None else np.union1d(truth, predicted))
    index = {int(label): position for position, label in enumerate(labels)}
    confusion = np.zeros((labels.shape[0], labels.shape[0]), dtype=np.int64)
    for true_label, predicted_label in zip(truth, predicted):
        confusion[index[int(true_label)], index[int(predicted_label)]] += 1

    hits = np.diag(confusion)
    precision: List[float] = []
    recall: List[float] = []
    flags: List[str] = []
    for position, label in enumerate(labels):
        column = int(confusion[:, position].sum())
        row = int(confusion[position].sum())
        if column == 0:
            flags.append(f"precision:{int(label)}")
        if row == 0:
            flags.append(f"recall:{int(label)}")
        precision.append(float(hits[position] / column) if column else 0.0)
        recall.append(float(hits[position] / row) if row else 0.0)
    return EvalReport(
        classes=tuple(int(label) for label in labels),
        test_accuracy=float(np.trace(confusion) / confusion.sum()),
        confusion=tuple(tuple(int(value) for value in row) for row in confusion),
        precision=tuple(precision),
        recall=tuple(recall),
        zero_division=tuple(flags),
    )
