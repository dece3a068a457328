"""
SMOTE oversampling of the risk classes.

Deutsch:
    SMOTE-Überabtastung der Risikoklassen bis zur Größe der Mehrheitsklasse.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ComputeError
from .parallel import map_ordered
from .randomness import STAGE_BALANCE, derive_rng

log = logging.getLogger(__name__)

TARGET_POLICIES = ("equalize-to-majority",)


class BalanceError(ComputeError):
    """Raised when oversampling is impossible. / Überabtastung nicht möglich."""


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_policy: str = "equalize-to-majority"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_neighbors < 1:
            raise BalanceError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.target_policy not in TARGET_POLICIES:
            raise BalanceError(f"unknown target policy {self.target_policy!r}")


@dataclass(frozen=True, eq=False)
class SmoteResult:
    """
    Oversampled data. Original rows come first and are unchanged.

    ``parents`` has one ``(base, neighbor)`` pair of original row indices per synthetic row.
    """

    X: np.ndarray
    y: np.ndarray
    synthetic_counts: Dict[int, int]
    parents: np.ndarray
    n_original: int

    def is_synthetic(self) -> np.ndarray:
        flags = np.zeros(self.y.shape[0], dtype=bool)
        flags[self.n_original:] = True
        return flags


def smote_oversample(X: np.ndarray, y: np.ndarray, cfg: SmoteConfig, n_jobs: int = 1) -> SmoteResult:
    """
    Grow every non-majority class to the majority size.

    Base samples are taken round-robin over a seeded permutation of the class; the partner
    is one of the base's k nearest same-class neighbors (k clamped to class size - 1),
    and the synthetic row is ``x + u * (x_nn - x)`` with ``u ~ U(0, 1)``.

    Deutsch:
        Erzeugt synthetische Minderheitsbeispiele auf Strecken zwischen Nachbarn.
    """

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise BalanceError("X and y must have matching rows")
    if not np.isfinite(X).all():
        raise BalanceError("SMOTE input contains missing or non-finite values")

    classes, counts = np.unique(y, return_counts=True)
    for label, count in zip(classes, counts):
        if count < 2:
            raise BalanceError(f"class too small for SMOTE: class {label} has {count} sample")
    target = int(counts.max())

    def _grow(position: int) -> Tuple[np.ndarray, np.ndarray]:
        label = classes[position]
        members = np.flatnonzero(y == label)
        need = target - members.shape[0]
        if need == 0:
            return np.empty((0, X.shape[1])), np.empty((0, 2), dtype=np.int64)
        rng = derive_rng(cfg.seed, STAGE_BALANCE, position)
        points = X[members]
        k = min(cfg.k_neighbors, members.shape[0] - 1)
        distances = cdist(points, points)
        np.fill_diagonal(distances, np.inf)
        neighbors = np.argsort(distances, axis=1, kind="stable")[:, :k]
        order = rng.permutation(members.shape[0])
        bases = order[np.arange(need) % members.shape[0]]
        partners = neighbors[bases, rng.integers(k, size=need)]
        gaps = rng.random(need)
        synthetic = points[bases] + gaps[:, None] * (points[partners] - points[bases])
        return synthetic, np.column_stack([members[bases], members[partners]])

    grown = map_ordered(_grow, range(classes.shape[0]), n_jobs)
    synthetic_counts = {int(label): int(block[0].shape[0]) for label, block in zip(classes, grown)}
    X_out = np.vstack([X] + [block[0] for block in grown])
    y_out = np.concatenate(
        [y] + [np.full(block[0].shape[0], label, dtype=y.dtype) for label, block in zip(classes, grown)]
    )
    parents = np.vstack([np.empty((0, 2), dtype=np.int64)] + [block[1] for block in grown]).astype(np.int64)
    log.info("SMOTE added %d synthetic rows (target %d per class)", int(parents.shape[0]), target)
    return SmoteResult(X=X_out, y=y_out, synthetic_counts=synthetic_counts, parents=parents, n_original=X.shape[0])
