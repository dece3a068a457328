"""
Random forest of Gini classification trees with out-of-bag bookkeeping.

Deutsch:
    Random Forest aus Gini-Entscheidungsbäumen mit Out-of-Bag-Indizes.
"""

from __future__ import annotations

import logging
import math
from typing import Any, List, Optional, Sequence, Tuple

import numba
import numpy as np

from ..models import ModelSpec, TrainedModel, Tree
from ..parallel import map_ordered
from ..randomness import STAGE_MODEL, derive_rng
from . import BaseClassifier, LearnError, encode_labels, labels_from_scores, register

log = logging.getLogger(__name__)

CACHE_NUMBA = False


@numba.njit(nogil=True, cache=CACHE_NUMBA)
def best_split(x, y, n_classes):
    """
    Best Gini split of one feature over midpoints of sorted distinct values.

    Returns ``(found, decrease, threshold)``; rows with ``x <= threshold`` go left.
    """

    m = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    total = np.zeros(n_classes)
    for index in range(m):
        total[y[index]] += 1.0
    parent = 1.0
    for c in range(n_classes):
        parent -= (total[c] / m) ** 2
    left = np.zeros(n_classes)
    found = False
    best = -1.0
    threshold = 0.0
    for position in range(m - 1):
        left[y[order[position]]] += 1.0
        lo = x[order[position]]
        hi = x[order[position + 1]]
        if lo >= hi:
            continue
        n_left = position + 1.0
        n_right = m - n_left
        gini_left = 1.0
        gini_right = 1.0
        for c in range(n_classes):
            gini_left -= (left[c] / n_left) ** 2
            gini_right -= ((total[c] - left[c]) / n_right) ** 2
        decrease = parent - (n_left * gini_left + n_right * gini_right) / m
        if decrease > best:
            best = decrease
            found = True
            threshold = lo + (hi - lo) / 2.0
            if threshold >= hi:
                threshold = lo
    return found, best, threshold


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    return float(1.0 - ((counts / total) ** 2).sum())


def _choose_split(
    X: np.ndarray, codes: np.ndarray, n_classes: int, candidates: Sequence[int]
) -> Optional[Tuple[int, float, float]]:
    chosen: Optional[Tuple[int, float, float]] = None
    for feature in candidates:
        found, decrease, threshold = best_split(np.ascontiguousarray(X[:, feature]), codes, n_classes)
        if found and (chosen is None or decrease > chosen[2]):
            chosen = (int(feature), float(threshold), float(decrease))
    return chosen


def grow_tree(
    X: np.ndarray,
    codes: np.ndarray,
    n_classes: int,
    mtry: int,
    rng: np.random.Generator,
    min_samples_split: int = 2,
    max_depth: Optional[int] = None,
) -> Tree:
    """
    Grow one unpruned tree on the given (bootstrap) rows.

    At every node ``mtry`` features are drawn without replacement; when none of them can
    separate the node, the remaining features are tried in the drawn order.
    """

    codes = np.ascontiguousarray(codes, dtype=np.int64)
    p = X.shape[1]
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    cover: List[float] = []
    impurity: List[float] = []
    decrease: List[float] = []
    value: List[np.ndarray] = []

    def _new_node(rows: np.ndarray) -> int:
        counts = np.bincount(codes[rows], minlength=n_classes).astype(np.float64)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        cover.append(float(rows.shape[0]))
        impurity.append(_gini(counts))
        decrease.append(0.0)
        value.append(counts / counts.sum())
        return len(feature) - 1

    root_rows = np.arange(X.shape[0])
    stack = [(_new_node(root_rows), root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        if impurity[node] <= 0.0 or rows.shape[0] < min_samples_split:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        drawn = rng.permutation(p)
        node_X = X[rows]
        split = _choose_split(node_X, codes[rows], n_classes, drawn[:mtry])
        if split is None:
            split = _choose_split(node_X, codes[rows], n_classes, drawn[mtry:])
        if split is None:
            continue
        split_feature, split_threshold, split_decrease = split
        goes_left = node_X[:, split_feature] <= split_threshold
        left_id = _new_node(rows[goes_left])
        right_id = _new_node(rows[~goes_left])
        feature[node] = split_feature
        threshold[node] = split_threshold
        left[node] = left_id
        right[node] = right_id
        decrease[node] = max(split_decrease, 0.0)
        stack.append((right_id, rows[~goes_left], depth + 1))
        stack.append((left_id, rows[goes_left], depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        n_samples=np.asarray(cover, dtype=np.float64),
        impurity=np.asarray(impurity, dtype=np.float64),
        impurity_decrease=np.asarray(decrease, dtype=np.float64),
        value=np.vstack(value),
    )


class RandomForest(BaseClassifier):
    kind = "RANDOM_FOREST"
    defaults = {"trees": 500, "mtry": None, "min_samples_split": 2, "max_depth": None}

    def check(self, name: str, value: Any) -> Optional[str]:
        if name == "trees" and not (isinstance(value, int) and value >= 1):
            return "must be an integer >= 1"
        if name in ("mtry", "max_depth") and value is not None and not (isinstance(value, int) and value >= 1):
            return "must be an integer >= 1 or null"
        if name == "min_samples_split" and not (isinstance(value, int) and value >= 2):
            return "must be an integer >= 2"
        return None

    def fit(self, spec: ModelSpec, X: np.ndarray, y: np.ndarray, n_jobs: int = 1) -> TrainedModel:
        params = self.resolve(spec.hyperparameters)
        classes, codes = encode_labels(y)
        n, p = X.shape
        mtry = int(params["mtry"] or max(1, math.isqrt(p)))
        if mtry > p:
            raise LearnError(f"RANDOM_FOREST: mtry={mtry} exceeds {p} features")

        def _grow(index: int) -> Tuple[Tree, np.ndarray]:
            rng = derive_rng(spec.seed, STAGE_MODEL, index)
            sample = rng.integers(n, size=n)
            tree = grow_tree(
                X[sample],
                codes[sample],
                classes.shape[0],
                mtry,
                rng,
                min_samples_split=int(params["min_samples_split"]),
                max_depth=params["max_depth"],
            )
            return tree, np.setdiff1d(np.arange(n), sample)

        grown = map_ordered(_grow, range(int(params["trees"])), n_jobs)
        log.debug("RANDOM_FOREST grew %d trees (mtry=%d)", len(grown), mtry)
        return TrainedModel(
            kind=self.kind,
            classes=classes,
            n_features=p,
            params={
                "trees": int(params["trees"]),
                "mtry": mtry,
                "min_samples_split": int(params["min_samples_split"]),
                "max_depth": params["max_depth"],
            },
            trees=tuple(item[0] for item in grown),
            oob_indices=tuple(item[1] for item in grown),
        )

    def predict(self, model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        probabilities = forest_proba(model, X)
        return labels_from_scores(model, probabilities), probabilities


def forest_proba(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Mean of the leaf class distributions over all trees, accumulated in tree order."""

    if not model.trees:
        raise LearnError(f"{model.kind}: model holds no trees")
    X = np.asarray(X, dtype=np.float64)
    total = np.zeros((X.shape[0], model.n_classes))
    for tree in model.trees:
        total += tree.predict_proba(X)
    return total / len(model.trees)


register(RandomForest())
