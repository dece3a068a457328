from __future__ import annotations

import itertools
import math
from typing import Sequence, Tuple

import numpy as np
import pytest

from risklab.explain import ExplainError
from risklab.explain.importance import importance_report, mda_importance, mdg_importance, rank_features
from risklab.explain.summary import LONG_COLUMNS, mean_abs_attribution, shap_summary
from risklab.explain.treeshap import tree_shap, tree_shap_single
from risklab.learn import fit_classifier
from risklab.learn.forest import forest_proba
from risklab.models import ModelSpec, ShapMatrix, TrainedModel, Tree


def _tree(feature: Sequence[int], threshold: Sequence[float], left: Sequence[int], right: Sequence[int],
          cover: Sequence[float], value: Sequence[Sequence[float]], decrease: Sequence[float] = ()) -> Tree:
    size = len(feature)
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        n_samples=np.asarray(cover, dtype=np.float64),
        impurity=np.zeros(size),
        impurity_decrease=np.asarray(decrease, dtype=np.float64) if decrease else np.zeros(size),
        value=np.asarray(value, dtype=np.float64),
    )


def _balanced_tree() -> Tree:
    return _tree(
        feature=[0, 1, 2, -1, -1, -1, -1],
        threshold=[0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
        left=[1, 3, 5, -1, -1, -1, -1],
        right=[2, 4, 6, -1, -1, -1, -1],
        cover=[10, 6, 4, 2, 4, 1, 3],
        value=[[0.5, 0.5], [0.4, 0.6], [0.6, 0.4], [1.0, 0.0], [0.25, 0.75], [0.0, 1.0], [0.6, 0.4]],
    )


def _repeated_feature_tree() -> Tree:
    return _tree(
        feature=[0, 1, -1, -1, 0, -1, -1],
        threshold=[0.5, 0.5, 0.0, 0.0, 0.2, 0.0, 0.0],
        left=[1, 3, -1, -1, 5, -1, -1],
        right=[2, 4, -1, -1, 6, -1, -1],
        cover=[12, 8, 4, 3, 5, 2, 3],
        value=[[0.4, 0.6], [0.5, 0.5], [0.1, 0.9], [0.8, 0.2], [0.2, 0.8], [0.5, 0.5], [0.0, 1.0]],
    )


def _conditional_expectation(tree: Tree, x: np.ndarray, known: Tuple[int, ...], node: int = 0) -> np.ndarray:
    if tree.left[node] == -1:
        return tree.value[node]
    feature = int(tree.feature[node])
    left, right = int(tree.left[node]), int(tree.right[node])
    if feature in known:
        child = left if x[feature] <= tree.threshold[node] else right
        return _conditional_expectation(tree, x, known, child)
    return (
        tree.n_samples[left] * _conditional_expectation(tree, x, known, left)
        + tree.n_samples[right] * _conditional_expectation(tree, x, known, right)
    ) / tree.n_samples[node]


def _brute_force_shap(tree: Tree, x: np.ndarray) -> np.ndarray:
    p = x.shape[0]
    phi = np.zeros((p, tree.value.shape[1]))
    for feature in range(p):
        others = [item for item in range(p) if item != feature]
        for size in range(p):
            weight = math.factorial(size) * math.factorial(p - size - 1) / math.factorial(p)
            for subset in itertools.combinations(others, size):
                with_feature = _conditional_expectation(tree, x, subset + (feature,))
                without = _conditional_expectation(tree, x, subset)
                phi[feature] += weight * (with_feature - without)
    return phi


ROWS = np.array(
    [
        [0.1, 0.9, 0.3],
        [0.7, 0.2, 0.8],
        [0.3, 0.1, 0.1],
        [0.9, 0.9, 0.9],
        [0.15, 0.6, 0.4],
    ]
)


@pytest.mark.parametrize("tree", [_balanced_tree(), _repeated_feature_tree()], ids=["balanced", "repeated-feature"])
def test_tree_shap_matches_subset_enumeration(tree: Tree) -> None:
    phi = tree_shap_single(tree, ROWS)

    for row in range(ROWS.shape[0]):
        assert np.allclose(phi[row], _brute_force_shap(tree, ROWS[row]), atol=1e-12)


@pytest.mark.parametrize("tree", [_balanced_tree(), _repeated_feature_tree()], ids=["balanced", "repeated-feature"])
def test_tree_shap_local_accuracy_single_tree(tree: Tree) -> None:
    phi = tree_shap_single(tree, ROWS)

    assert np.allclose(tree.expected_value() + phi.sum(axis=1), tree.predict_proba(ROWS), atol=1e-12)


def test_unused_feature_gets_zero_attribution() -> None:
    phi = tree_shap_single(_repeated_feature_tree(), ROWS)

    assert np.all(phi[:, 2, :] == 0.0)


def test_single_leaf_tree_attributes_nothing() -> None:
    leaf = _tree([-1], [0.0], [-1], [-1], [5], [[0.3, 0.7]])

    phi = tree_shap_single(leaf, ROWS)

    assert phi.shape == (ROWS.shape[0], 3, 2)
    assert np.all(phi == 0.0)


def _forest_data(seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 4))
    y = (X[:, 0] > 0).astype(np.int64) + (X[:, 1] > 0.5).astype(np.int64)
    return X, y


def _forest(trees: int = 10, seed: int = 3) -> Tuple[TrainedModel, np.ndarray, np.ndarray]:
    X, y = _forest_data()
    spec = ModelSpec(kind="RANDOM_FOREST", hyperparameters={"trees": trees}, seed=seed)
    return fit_classifier(spec, X, y), X, y


def test_forest_shap_local_accuracy() -> None:
    model, X, _ = _forest()

    shap = tree_shap(model, X, row_keys=tuple(str(i) for i in range(X.shape[0])))

    assert shap.values.shape == (X.shape[0], X.shape[1], model.n_classes)
    reconstructed = shap.base_values[None, :] + shap.values.sum(axis=1)
    assert np.allclose(reconstructed, forest_proba(model, X), atol=1e-10)
    assert shap.base_values.sum() == pytest.approx(1.0)


def test_forest_shap_independent_of_worker_count() -> None:
    model, X, _ = _forest(trees=30)

    serial = tree_shap(model, X, n_jobs=1)
    threaded = tree_shap(model, X, n_jobs=2)

    assert np.array_equal(serial.values, threaded.values)
    assert np.array_equal(serial.base_values, threaded.base_values)


def test_tree_shap_rejects_other_models() -> None:
    X, y = _forest_data()
    lda = fit_classifier(ModelSpec(kind="LDA"), X, y)

    with pytest.raises(ExplainError, match="RANDOM_FOREST"):
        tree_shap(lda, X)


def test_tree_shap_rejects_wrong_width_and_zero_cover() -> None:
    model, X, _ = _forest(trees=2)
    with pytest.raises(ExplainError, match="columns"):
        tree_shap(model, X[:, :2])

    broken = _tree([0, -1, -1], [0.5, 0.0, 0.0], [1, -1, -1], [2, -1, -1], [4, 0, 4], [[0.5, 0.5]] * 3)
    corrupt = TrainedModel(kind="RANDOM_FOREST", classes=np.array([0, 1]), n_features=3, trees=(broken,))
    with pytest.raises(ExplainError, match="zero-cover"):
        tree_shap(corrupt, ROWS)


def test_mdg_of_a_stump_is_its_weighted_gini_decrease() -> None:
    stump = _tree([1, -1, -1], [0.5, 0.0, 0.0], [1, -1, -1], [2, -1, -1], [10, 4, 6],
                  [[0.5, 0.5], [1.0, 0.0], [0.2, 0.8]], decrease=[0.3, 0.0, 0.0])
    leaf = _tree([-1], [0.0], [-1], [-1], [10], [[0.5, 0.5]])
    model = TrainedModel(kind="RANDOM_FOREST", classes=np.array([0, 1]), n_features=3, trees=(stump, leaf))

    assert mdg_importance(model).tolist() == pytest.approx([0.0, 0.15, 0.0])


def test_mda_of_a_constant_feature_is_zero() -> None:
    X, y = _forest_data(seed=2)
    X[:, 3] = 1.0
    model = fit_classifier(ModelSpec(kind="RANDOM_FOREST", hyperparameters={"trees": 20}, seed=1), X, y)

    mean, sd = mda_importance(model, X, y, repetitions=3, seed=5)

    assert mean[3] == 0.0
    assert sd[3] == 0.0
    assert mean[0] > 0.0


def test_mda_is_seeded_and_independent_of_worker_count() -> None:
    model, X, y = _forest(trees=8)

    serial = mda_importance(model, X, y, repetitions=3, seed=2)
    threaded = mda_importance(model, X, y, repetitions=3, seed=2, n_jobs=3)

    assert np.array_equal(serial[0], threaded[0])
    assert np.array_equal(serial[1], threaded[1])


def test_importance_needs_a_forest() -> None:
    X, y = _forest_data()
    lda = fit_classifier(ModelSpec(kind="LDA"), X, y)

    with pytest.raises(ExplainError):
        mda_importance(lda, X, y)
    with pytest.raises(ExplainError):
        mdg_importance(lda)


def test_importance_report_ranks() -> None:
    model, X, y = _forest(trees=10)
    names = ("a", "b", "c", "d")

    report = importance_report(model, X, y, names, repetitions=2, seed=1)

    assert report.feature_names == names
    assert sorted(report.mda_rank.tolist()) == [1, 2, 3, 4]
    assert sorted(report.mdg_rank.tolist()) == [1, 2, 3, 4]
    assert report.mdg_rank[int(np.argmax(report.mdg))] == 1
    restored = type(report).from_dict(report.to_dict())
    assert np.array_equal(restored.mdg, report.mdg)


def test_rank_features_ties_keep_feature_order() -> None:
    assert rank_features(np.array([0.2, 0.5, 0.5, 0.1])).tolist() == [3, 1, 2, 4]
    assert rank_features(np.zeros(3)).tolist() == [1, 2, 3]


def _shap(values: np.ndarray) -> ShapMatrix:
    return ShapMatrix(values=values, base_values=np.zeros(values.shape[2]),
                      row_keys=tuple(f"{i:05d}" for i in range(values.shape[0])))


def test_summary_ranking_is_row_order_invariant() -> None:
    rng = np.random.default_rng(4)
    values = rng.normal(size=(25, 4, 3))
    X_raw = rng.normal(size=(25, 4))
    names = ("w", "x", "y", "z")
    labels = ("High", "Medium", "Low")
    order = rng.permutation(25)

    summary = shap_summary(_shap(values), X_raw, names, labels)
    shuffled = shap_summary(_shap(values[order]), X_raw[order], names, labels)

    assert np.array_equal(summary.mean_abs, shuffled.mean_abs)
    assert np.array_equal(summary.ranks, shuffled.ranks)
    assert summary.mean_abs.shape == (4, 3)
    top = names[int(np.argmax(summary.mean_abs[:, 0]))]
    assert summary.ranking("High")[0] == top
    assert summary.top_features("High", 2) == summary.ranking("High")[:2]


def test_all_zero_attributions_rank_in_feature_order() -> None:
    summary = shap_summary(_shap(np.zeros((5, 3, 2))), np.zeros((5, 3)), ("c", "a", "b"), ("High", "Low"))

    assert summary.ranking("High") == ["c", "a", "b"]
    assert summary.ranking("Low") == ["c", "a", "b"]
    assert np.all(mean_abs_attribution(np.zeros((5, 3, 2))) == 0.0)


def test_dependence_series_and_long_frame() -> None:
    rng = np.random.default_rng(1)
    values = rng.normal(size=(6, 2, 2))
    X_raw = rng.normal(size=(6, 2))
    summary = shap_summary(_shap(values), X_raw, ("a", "b"), ("High", "Low"))

    raw, attribution = summary.dependence("b", "Low")
    assert np.array_equal(raw, X_raw[:, 1])
    assert np.array_equal(attribution, values[:, 1, 1])
    with pytest.raises(KeyError, match="Unknown feature"):
        summary.dependence("zeta", "Low")

    frame = summary.long_frame()
    assert tuple(frame.columns) == LONG_COLUMNS
    assert len(frame) == 6 * 2 * 2
    assert frame["class_label"].tolist()[:12] == ["High"] * 12
    assert frame["fips"].tolist()[:6] == [f"{i:05d}" for i in range(6)]
    assert len(summary.long_frame(["a"])) == 12

    payload = summary.to_dict()
    assert payload["rankings"]["High"] == summary.ranking("High")
    assert type(summary).rankings_from_dict(payload) == payload["rankings"]


def test_summary_rejects_mismatched_shapes() -> None:
    with pytest.raises(ExplainError, match="does not match"):
        shap_summary(_shap(np.zeros((4, 2, 2))), np.zeros((3, 2)), ("a", "b"), ("High", "Low"))
    with pytest.raises(ExplainError, match="n x p x K"):
        shap_summary(ShapMatrix(values=np.zeros((4, 2)), base_values=np.zeros(2)), np.zeros((4, 2)), ("a", "b"),
                     ("High", "Low"))
    with pytest.raises(ExplainError, match="feature names"):
        shap_summary(_shap(np.zeros((4, 2, 2))), np.zeros((4, 2)), ("a",), ("High", "Low"))


def _stump(feature: int) -> Tree:
    return _tree([feature, -1, -1], [0.5, 0.0, 0.0], [1, -1, -1], [2, -1, -1], [10, 6, 4],
                 [[0.6, 0.4], [0.8, 0.2], [0.3, 0.7]])


def test_duplicated_feature_shares_attribution_equally() -> None:
    classes = np.array([0, 1])
    original = TrainedModel(kind="RANDOM_FOREST", classes=classes, n_features=2, trees=(_stump(0), _stump(0)))
    duplicated = TrainedModel(kind="RANDOM_FOREST", classes=classes, n_features=3, trees=(_stump(0), _stump(1)))
    base_rows = np.array([[0.2, 0.7], [0.8, 0.1], [0.5, 0.5], [0.9, 0.9]])
    rows = np.column_stack([base_rows[:, 0], base_rows[:, 0], base_rows[:, 1]])

    single = tree_shap(original, base_rows)
    shared = tree_shap(duplicated, rows)

    assert np.allclose(shared.values[:, 0, :], shared.values[:, 1, :], atol=1e-9)
    assert np.allclose(shared.values[:, 0, :] + shared.values[:, 1, :], single.values[:, 0, :], atol=1e-9)
    assert np.all(shared.values[:, 2, :] == 0.0)
    for row in range(rows.shape[0]):
        for tree in duplicated.trees:
            assert np.allclose(tree_shap_single(tree, rows[row:row + 1])[0], _brute_force_shap(tree, rows[row]),
                               atol=1e-9)
