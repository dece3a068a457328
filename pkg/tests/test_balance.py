from __future__ import annotations

import numpy as np
import pytest

from risklab.balance import BalanceError, SmoteConfig, smote_oversample


def _imbalanced(seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    sizes = {0: 10, 1: 4, 2: 6}
    X = np.vstack([rng.normal(3.0 * label, 1.0, size=(size, 3)) for label, size in sizes.items()])
    y = np.concatenate([np.full(size, label) for label, size in sizes.items()])
    return X, y


def test_classes_are_equalized_to_majority() -> None:
    X, y = _imbalanced()

    result = smote_oversample(X, y, SmoteConfig(seed=7))

    assert result.synthetic_counts == {0: 0, 1: 6, 2: 4}
    assert np.bincount(result.y).tolist() == [10, 10, 10]
    assert result.X.shape == (30, 3)
    assert result.parents.shape == (10, 2)
    assert result.is_synthetic().sum() == 10


def test_original_rows_come_first_unchanged() -> None:
    X, y = _imbalanced()

    result = smote_oversample(X, y, SmoteConfig(seed=1))

    assert np.array_equal(result.X[: X.shape[0]], X)
    assert np.array_equal(result.y[: y.shape[0]], y)


def test_synthetic_rows_lie_between_same_class_parents() -> None:
    X, y = _imbalanced(seed=3)

    result = smote_oversample(X, y, SmoteConfig(k_neighbors=2, seed=5))

    synthetic = result.X[result.n_original:]
    labels = result.y[result.n_original:]
    for row, label, (base, partner) in zip(synthetic, labels, result.parents):
        assert y[base] == label
        assert y[partner] == label
        assert base != partner
        direction = X[partner] - X[base]
        gap = float(np.dot(row - X[base], direction) / np.dot(direction, direction))
        assert 0.0 <= gap <= 1.0
        assert np.allclose(X[base] + gap * direction, row)


def test_partner_is_among_k_nearest_neighbors() -> None:
    X, y = _imbalanced(seed=4)

    result = smote_oversample(X, y, SmoteConfig(k_neighbors=1, seed=2))

    for base, partner in result.parents:
        members = np.flatnonzero((y == y[base]) & (np.arange(y.shape[0]) != base))
        distances = np.linalg.norm(X[members] - X[base], axis=1)
        assert partner == members[int(np.argmin(distances))]


def test_seeded_and_independent_of_worker_count() -> None:
    X, y = _imbalanced()

    first = smote_oversample(X, y, SmoteConfig(seed=11))
    second = smote_oversample(X, y, SmoteConfig(seed=11), n_jobs=3)
    other = smote_oversample(X, y, SmoteConfig(seed=12))

    assert np.array_equal(first.X, second.X)
    assert np.array_equal(first.parents, second.parents)
    assert not np.array_equal(first.X, other.X)


def test_balanced_input_is_returned_unchanged() -> None:
    X = np.arange(12, dtype=np.float64).reshape(6, 2)
    y = np.array([0, 0, 0, 1, 1, 1])

    result = smote_oversample(X, y, SmoteConfig())

    assert np.array_equal(result.X, X)
    assert result.parents.shape == (0, 2)


def test_singleton_class_is_rejected() -> None:
    X = np.arange(8, dtype=np.float64).reshape(4, 2)
    y = np.array([0, 0, 0, 1])

    with pytest.raises(BalanceError, match="class too small for SMOTE"):
        smote_oversample(X, y, SmoteConfig())


def test_non_finite_input_is_rejected() -> None:
    X = np.array([[0.0, 1.0], [np.inf, 1.0], [2.0, 2.0], [3.0, 3.0]])

    with pytest.raises(BalanceError, match="non-finite"):
        smote_oversample(X, np.array([0, 0, 1, 1]), SmoteConfig())


def test_config_validation() -> None:
    with pytest.raises(BalanceError):
        SmoteConfig(k_neighbors=0)
    with pytest.raises(BalanceError):
        SmoteConfig(target_policy="double")


def _segment_residual(point: np.ndarray, start: np.ndarray, end: np.ndarray) -> tuple[float, float]:
    direction = end - start
    gap = float(np.dot(point - start, direction) / np.dot(direction, direction))
    return float(np.linalg.norm(start + gap * direction - point)), gap


def test_thousand_synthetics_stay_on_parent_segments() -> None:
    rng = np.random.default_rng(31)
    X = np.vstack([rng.normal(0.0, 1.0, size=(1040, 4)), rng.normal(2.0, 1.5, size=(40, 4))])
    y = np.concatenate([np.zeros(1040, dtype=np.int64), np.ones(40, dtype=np.int64)])

    result = smote_oversample(X, y, SmoteConfig(seed=19))

    assert result.parents.shape == (1000, 2)
    assert np.bincount(result.y).tolist() == [1040, 1040]
    for row, (base, partner) in zip(result.X[result.n_original:], result.parents):
        residual, gap = _segment_residual(row, X[base], X[partner])
        assert residual < 1e-9
        assert 0.0 <= gap <= 1.0


def test_two_point_minority_clamps_neighbors_to_one() -> None:
    rng = np.random.default_rng(8)
    a, b = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    X = np.vstack([rng.normal(10.0, 1.0, size=(10, 2)), a, b])
    y = np.array([0] * 10 + [1, 1])

    result = smote_oversample(X, y, SmoteConfig(k_neighbors=5, seed=4))

    assert result.synthetic_counts == {0: 0, 1: 8}
    for row, (base, partner) in zip(result.X[result.n_original:], result.parents):
        assert {int(base), int(partner)} == {10, 11}
        residual, gap = _segment_residual(row, a, b)
        assert residual < 1e-12
        assert 0.0 <= gap <= 1.0
