"""
Path-dependent TreeSHAP for forests with class-distribution leaves.

The EXTEND/UNWIND recursion follows the reference TreeSHAP algorithm; leaf values are
vectors (one entry per class), so every row gets a p × K attribution block.

Deutsch:
    Exakte pfadabhängige TreeSHAP-Werte auf Klassenwahrscheinlichkeits-Skala.
"""

from __future__ import annotations

import logging
from typing import List, Tuple

import numba
import numpy as np

from ..models import ShapMatrix, TrainedModel, Tree
from ..parallel import map_ordered
from . import ExplainError

log = logging.getLogger(__name__)

NO_CHILD = -1
TREE_CHUNK = 25
CACHE_NUMBA = False

_i8 = numba.types.int64
_f8 = numba.types.float64
_i8_1d = numba.types.int64[:]
_f8_1d = numba.types.float64[:]
_f8_2d = numba.types.float64[:, :]
_f8_3d = numba.types.float64[:, :, :]


# extend the decision path with a fraction of one and zero extensions
@numba.jit(
    numba.types.void(_i8_1d, _f8_1d, _f8_1d, _f8_1d, _i8, _f8, _f8, _i8),
    nopython=True,
    nogil=True,
    cache=CACHE_NUMBA,
)
def extend_path(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, zero_fraction, one_fraction,
                feature_index):
    feature_indexes[unique_depth] = feature_index
    zero_fractions[unique_depth] = zero_fraction
    one_fractions[unique_depth] = one_fraction
    pweights[unique_depth] = 1.0 if unique_depth == 0 else 0.0
    for i in range(unique_depth - 1, -1, -1):
        pweights[i + 1] += one_fraction * pweights[i] * (i + 1) / (unique_depth + 1)
        pweights[i] = zero_fraction * pweights[i] * (unique_depth - i) / (unique_depth + 1)


# undo a previous extension of the decision path
@numba.jit(
    numba.types.void(_i8_1d, _f8_1d, _f8_1d, _f8_1d, _i8, _i8),
    nopython=True,
    nogil=True,
    cache=CACHE_NUMBA,
)
def unwind_path(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, path_index):
    one_fraction = one_fractions[path_index]
    zero_fraction = zero_fractions[path_index]
    next_one_portion = pweights[unique_depth]
    for i in range(unique_depth - 1, -1, -1):
        if one_fraction != 0:
            tmp = pweights[i]
            pweights[i] = next_one_portion * (unique_depth + 1) / ((i + 1) * one_fraction)
            next_one_portion = tmp - pweights[i] * zero_fraction * (unique_depth - i) / (unique_depth + 1)
        else:
            pweights[i] = (pweights[i] * (unique_depth + 1)) / (zero_fraction * (unique_depth - i))
    for i in range(path_index, unique_depth):
        feature_indexes[i] = feature_indexes[i + 1]
        zero_fractions[i] = zero_fractions[i + 1]
        one_fractions[i] = one_fractions[i + 1]


# total permutation weight if a previous extension were unwound
@numba.jit(
    _f8(_f8_1d, _f8_1d, _f8_1d, _i8, _i8),
    nopython=True,
    nogil=True,
    cache=CACHE_NUMBA,
)
def unwound_path_sum(zero_fractions, one_fractions, pweights, unique_depth, path_index):
    one_fraction = one_fractions[path_index]
    zero_fraction = zero_fractions[path_index]
    next_one_portion = pweights[unique_depth]
    total = 0.0
    for i in range(unique_depth - 1, -1, -1):
        if one_fraction != 0:
            tmp = next_one_portion / ((i + 1) * one_fraction)
            total += tmp
            next_one_portion = pweights[i] - tmp * zero_fraction * (unique_depth - i)
        else:
            total += pweights[i] / (zero_fraction * (unique_depth - i))
    return total * (unique_depth + 1)


@numba.jit(
    numba.types.void(
        _i8_1d, _i8_1d, _i8_1d, _f8_1d, _f8_2d, _f8_1d, _f8_1d, _f8_2d,
        _i8, _i8, _i8_1d, _f8_1d, _f8_1d, _f8_1d, _f8, _f8, _i8, _f8,
    ),
    nopython=True,
    nogil=True,
    cache=CACHE_NUMBA,
)
def tree_shap_recursive(children_left, children_right, features, thresholds, values, node_sample_weight, x, phi,
                        node_index, unique_depth, parent_feature_indexes, parent_zero_fractions,
                        parent_one_fractions, parent_pweights, parent_zero_fraction, parent_one_fraction,
                        parent_feature_index, condition_fraction):
    if condition_fraction == 0:
        return

    # each level works on its own slice of the path buffers
    feature_indexes = parent_feature_indexes[unique_depth + 1:]
    feature_indexes[:unique_depth + 1] = parent_feature_indexes[:unique_depth + 1]
    zero_fractions = parent_zero_fractions[unique_depth + 1:]
    zero_fractions[:unique_depth + 1] = parent_zero_fractions[:unique_depth + 1]
    one_fractions = parent_one_fractions[unique_depth + 1:]
    one_fractions[:unique_depth + 1] = parent_one_fractions[:unique_depth + 1]
    pweights = parent_pweights[unique_depth + 1:]
    pweights[:unique_depth + 1] = parent_pweights[:unique_depth + 1]

    extend_path(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, parent_zero_fraction,
                parent_one_fraction, parent_feature_index)

    split_index = features[node_index]

    if children_right[node_index] == NO_CHILD:
        n_outputs = values.shape[1]
        for i in range(1, unique_depth + 1):
            w = unwound_path_sum(zero_fractions, one_fractions, pweights, unique_depth, i)
            scale = w * (one_fractions[i] - zero_fractions[i]) * condition_fraction
            for c in range(n_outputs):
                phi[feature_indexes[i], c] += scale * values[node_index, c]
        return

    cleft = children_left[node_index]
    cright = children_right[node_index]
    if x[split_index] <= thresholds[node_index]:
        hot_index = cleft
        cold_index = cright
    else:
        hot_index = cright
        cold_index = cleft

    w = node_sample_weight[node_index]
    hot_zero_fraction = node_sample_weight[hot_index] / w
    cold_zero_fraction = node_sample_weight[cold_index] / w
    incoming_zero_fraction = 1.0
    incoming_one_fraction = 1.0

    # undo an earlier split on the same feature so it can be redone here
    path_index = 0
    while path_index <= unique_depth:
        if feature_indexes[path_index] == split_index:
            break
        path_index += 1
    if path_index != unique_depth + 1:
        incoming_zero_fraction = zero_fractions[path_index]
        incoming_one_fraction = one_fractions[path_index]
        unwind_path(feature_indexes, zero_fractions, one_fractions, pweights, unique_depth, path_index)
        unique_depth -= 1

    tree_shap_recursive(children_left, children_right, features, thresholds, values, node_sample_weight, x, phi,
                        hot_index, unique_depth + 1, feature_indexes, zero_fractions, one_fractions, pweights,
                        hot_zero_fraction * incoming_zero_fraction, incoming_one_fraction, split_index,
                        condition_fraction)
    tree_shap_recursive(children_left, children_right, features, thresholds, values, node_sample_weight, x, phi,
                        cold_index, unique_depth + 1, feature_indexes, zero_fractions, one_fractions, pweights,
                        cold_zero_fraction * incoming_zero_fraction, 0.0, split_index, condition_fraction)


@numba.jit(
    numba.types.void(_i8_1d, _i8_1d, _i8_1d, _f8_1d, _f8_2d, _f8_1d, _f8_2d, _f8_3d, _i8),
    nopython=True,
    nogil=True,
    cache=CACHE_NUMBA,
)
def tree_shap_rows(children_left, children_right, features, thresholds, values, node_sample_weight, X, phi,
                   tree_depth):
    max_depth = tree_depth + 2
    size = (max_depth * (max_depth + 1)) // 2
    feature_indexes = np.zeros(size, dtype=np.int64)
    zero_fractions = np.zeros(size, dtype=np.float64)
    one_fractions = np.zeros(size, dtype=np.float64)
    pweights = np.zeros(size, dtype=np.float64)
    for row in range(X.shape[0]):
        tree_shap_recursive(children_left, children_right, features, thresholds, values, node_sample_weight,
                            X[row], phi[row], 0, 0, feature_indexes, zero_fractions, one_fractions, pweights,
                            1.0, 1.0, -1, 1.0)


def tree_shap_single(tree: Tree, X: np.ndarray) -> np.ndarray:
    """n × p × K attributions of one tree's class-probability output."""

    X = np.ascontiguousarray(X, dtype=np.float64)
    if (tree.n_samples <= 0).any():
        raise ExplainError("tree with zero-cover node; model is corrupt")
    phi = np.zeros((X.shape[0], X.shape[1], tree.value.shape[1]))
    tree_shap_rows(
        np.ascontiguousarray(tree.left, dtype=np.int64),
        np.ascontiguousarray(tree.right, dtype=np.int64),
        np.ascontiguousarray(tree.feature, dtype=np.int64),
        np.ascontiguousarray(tree.threshold, dtype=np.float64),
        np.ascontiguousarray(tree.value, dtype=np.float64),
        np.ascontiguousarray(tree.n_samples, dtype=np.float64),
        X,
        phi,
        tree.max_depth(),
    )
    return phi


def tree_shap(model: TrainedModel, X: np.ndarray, row_keys: Tuple[str, ...] = (), feature_names: Tuple[str, ...] = (),
              n_jobs: int = 1) -> ShapMatrix:
    """
    Forest attributions: the mean over trees of exact per-tree Shapley values.

    Trees are processed in fixed chunks whose partial sums are added in tree order, so the
    result does not depend on the worker count. ``base_values`` is the mean cover-weighted
    leaf distribution of the trees.

    Deutsch:
        Mittelwert der exakten Shapley-Werte aller Bäume.
    """

    if model.kind != "RANDOM_FOREST" or not model.trees:
        raise ExplainError(f"TreeSHAP needs a RANDOM_FOREST model, got {model.kind}")
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ExplainError(f"TreeSHAP input must have {model.n_features} columns")
    for tree in model.trees:
        if (tree.n_samples <= 0).any():
            raise ExplainError("tree with zero-cover node; model is corrupt")

    chunks: List[Tuple[Tree, ...]] = [
        model.trees[start:start + TREE_CHUNK] for start in range(0, len(model.trees), TREE_CHUNK)
    ]

    def _chunk(trees: Tuple[Tree, ...]) -> np.ndarray:
        partial = np.zeros((X.shape[0], X.shape[1], model.n_classes))
        for tree in trees:
            partial += tree_shap_single(tree, X)
        return partial

    total = np.zeros((X.shape[0], X.shape[1], model.n_classes))
    for partial in map_ordered(_chunk, chunks, n_jobs):
        total += partial
    base = np.zeros(model.n_classes)
    for tree in model.trees:
        base += tree.expected_value()
    log.info("TreeSHAP over %d rows x %d trees", X.shape[0], len(model.trees))
    return ShapMatrix(
        values=total / len(model.trees),
        base_values=base / len(model.trees),
        feature_names=tuple(feature_names),
        row_keys=tuple(row_keys),
    )
