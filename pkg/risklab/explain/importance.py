"""
Permutation (MDA) and Gini (MDG) importances of a fitted forest.

Deutsch:
    Permutations- (MDA) und Gini-Wichtigkeit (MDG) eines Random Forest.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from ..models import ImportanceReport, TrainedModel
from ..parallel import map_ordered
from ..randomness import STAGE_EXPLAIN, derive_rng
from . import ExplainError

log = logging.getLogger(__name__)


def _require_forest(model: TrainedModel) -> None:
    if model.kind != "RANDOM_FOREST" or not model.trees:
        raise ExplainError(f"feature attribution needs a RANDOM_FOREST model, got {model.kind}")


def mda_importance(
    model: TrainedModel,
    X_train: np.ndarray,
    y_train: np.ndarray,
    repetitions: int = 5,
    seed: int = 0,
    n_jobs: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean decrease in out-of-bag accuracy when one feature is permuted.

    For each repetition and tree the tree's OOB rows are scored before and after a seeded
    permutation of one feature column; losses are averaged over trees with OOB rows.
    Returns raw (unscaled) mean and sample sd over the repetitions.

    Deutsch:
        Mittlerer Genauigkeitsverlust auf Out-of-Bag-Zeilen nach Permutation eines Merkmals.
    """

    _require_forest(model)
    if len(model.oob_indices) != len(model.trees):
        raise ExplainError("forest has no out-of-bag records; refit it with OOB tracking enabled")
    if repetitions < 1:
        raise ExplainError("repetitions must be >= 1")
    X = np.asarray(X_train, dtype=np.float64)
    codes = np.searchsorted(model.classes, np.asarray(y_train))
    p = X.shape[1]
    trees = [index for index, oob in enumerate(model.oob_indices) if oob.shape[0] > 0]
    if not trees:
        raise ExplainError("no tree has out-of-bag rows")

    def _repetition(repetition: int) -> np.ndarray:
        losses = np.zeros(p)
        for index in trees:
            tree = model.trees[index]
            oob = model.oob_indices[index]
            rng = derive_rng(seed, STAGE_EXPLAIN, repetition, index)
            rows = X[oob]
            truth = codes[oob]
            baseline = float((np.argmax(tree.predict_proba(rows), axis=1) == truth).mean())
            for feature in range(p):
                shuffled = rows.copy()
                shuffled[:, feature] = rows[rng.permutation(oob.shape[0]), feature]
                permuted = float((np.argmax(tree.predict_proba(shuffled), axis=1) == truth).mean())
                losses[feature] += baseline - permuted
        return losses / len(trees)

    runs = np.vstack(map_ordered(_repetition, range(repetitions), n_jobs))
    sd = runs.std(axis=0, ddof=1) if repetitions > 1 else np.zeros(p)
    return runs.mean(axis=0), sd


def mdg_importance(model: TrainedModel) -> np.ndarray:
    """
    Cover-weighted Gini decrease per feature, summed within each tree and averaged over trees.
    """

    _require_forest(model)
    totals = np.zeros(model.n_features)
    for tree in model.trees:
        if (tree.n_samples <= 0).any():
            raise ExplainError("tree with zero-cover node; model is corrupt")
        internal = tree.feature >= 0
        weights = tree.n_samples[internal] / tree.n_samples[0] * tree.impurity_decrease[internal]
        totals += np.bincount(tree.feature[internal], weights=weights, minlength=model.n_features)
    return totals / len(model.trees)


def rank_features(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, highest score first; equal scores keep feature order."""

    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    ranks = np.empty(order.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, order.shape[0] + 1)
    return ranks


def importance_report(
    model: TrainedModel,
    X_train: np.ndarray,
    y_train: np.ndarray,
    feature_names: Sequence[str],
    repetitions: int = 5,
    seed: int = 0,
    shap_mean_abs: Optional[np.ndarray] = None,
    class_labels: Sequence[str] = (),
    n_jobs: int = 1,
) -> ImportanceReport:
    mda_mean, mda_sd = mda_importance(model, X_train, y_train, repetitions=repetitions, seed=seed, n_jobs=n_jobs)
    mdg = mdg_importance(model)
    log.info("importance: top MDA feature %s, top MDG feature %s", feature_names[int(np.argmax(mda_mean))],
             feature_names[int(np.argmax(mdg))])
    return ImportanceReport(
        feature_names=tuple(feature_names),
        mda_mean=mda_mean,
        mda_sd=mda_sd,
        mdg=mdg,
        mda_rank=rank_features(mda_mean),
        mdg_rank=rank_features(mdg),
        class_labels=tuple(class_labels),
        shap_mean_abs=shap_mean_abs,
    )
