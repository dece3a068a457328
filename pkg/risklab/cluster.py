"""
K-means risk clustering on the outcome rates, Elbow selection and risk ranking.

Deutsch:
    K-Means-Clustering der Raten, Elbow-Auswahl von k und Risiko-Rangfolge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ComputeError
from .models import ClusterStats, KMeansModel, RiskLabeling
from .parallel import map_ordered
from .randomness import STAGE_CLUSTER, derive_rng

log = logging.getLogger(__name__)

ELBOW_METHOD = "max-chord-distance"
RETRY_RESTART_FACTOR = 4
_MONOTONE_SLACK = 1e-12


class ClusterError(ComputeError):
    """Raised when clustering cannot proceed. / Clustering nicht möglich."""


@dataclass(frozen=True, eq=False)
class ElbowCurve:
    points: Tuple[Tuple[int, float], ...]
    chosen_k: int
    method: str = ELBOW_METHOD
    retried: Tuple[int, ...] = ()
    models: Mapping[int, KMeansModel] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "points": [[k, float(sse)] for k, sse in self.points],
            "chosen_k": self.chosen_k,
            "method": self.method,
            "retried": list(self.retried),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ElbowCurve":
        return cls(
            points=tuple((int(k), float(sse)) for k, sse in payload["points"]),
            chosen_k=int(payload["chosen_k"]),
            method=str(payload.get("method", ELBOW_METHOD)),
            retried=tuple(int(k) for k in payload.get("retried", ())),
        )


def kmeans_fit(
    points: np.ndarray,
    k: int,
    seed: int,
    restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
    row_keys: Optional[Sequence[str]] = None,
    n_jobs: int = 1,
    warm_start: Optional[np.ndarray] = None,
) -> KMeansModel:
    """
    Best-of-restarts Lloyd iterations from k-means++ seeding.

    Seeding draws are made over a canonical row order (``row_keys`` when given, else the
    lexicographic order of the coordinates), so permuting the input rows permutes the
    assignments and leaves centroids and SSE unchanged. Each restart derives its generator
    from ``(seed, restart)``.

    Deutsch:
        K-Means mit k-means++-Start, mehreren Neustarts und Rückgabe der besten Lösung.
    """

    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if k < 1:
        raise ClusterError(f"k must be >= 1, got {k}")
    if k > n:
        raise ClusterError(f"more clusters than points (k={k}, n={n})")
    if not np.isfinite(X).all():
        raise ClusterError("clustering coordinates must be finite")
    if restarts < 1:
        raise ClusterError("restarts must be >= 1")

    order = _canonical_order(X, row_keys)
    Xc = X[order]

    if warm_start is not None:
        results = [_lloyd(Xc, np.asarray(warm_start, dtype=np.float64).copy(), max_iter, tol)]
    else:

        def _restart(restart: int) -> Tuple[np.ndarray, np.ndarray, float, int]:
            rng = derive_rng(seed, STAGE_CLUSTER, restart)
            return _lloyd(Xc, _kmeans_plus_plus(Xc, k, rng), max_iter, tol)

        results = map_ordered(_restart, range(restarts), n_jobs)

    best = min(range(len(results)), key=lambda index: (results[index][2], index))
    centers, assign_c, _, iterations = results[best]
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = assign_c
    sse = _sse(X, centers, assignments)
    log.debug("kmeans k=%d: best restart %d of %d, sse=%.6g, iterations=%d", k, best, len(results), sse, iterations)
    return KMeansModel(
        k=k,
        centroids=centers,
        assignments=assignments,
        sse=sse,
        iterations=iterations,
        seed=int(seed),
        restarts_used=len(results),
    )


def _canonical_order(X: np.ndarray, row_keys: Optional[Sequence[str]]) -> np.ndarray:
    if row_keys is not None:
        if len(row_keys) != X.shape[0]:
            raise ClusterError("row_keys must align with the points")
        return np.array(sorted(range(len(row_keys)), key=lambda index: row_keys[index]), dtype=np.int64)
    return np.lexsort(X.T[::-1])


def _squared_distances(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _sse(X: np.ndarray, centers: np.ndarray, assign: np.ndarray) -> float:
    return float(((X - centers[assign]) ** 2).sum())


def _kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            index = int(rng.integers(n))
        else:
            cumulative = np.cumsum(closest)
            index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
            index = min(index, n - 1)
        chosen.append(index)
        closest = np.minimum(closest, ((X - X[index]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _means(X: np.ndarray, assign: np.ndarray, centers: np.ndarray) -> np.ndarray:
    k = centers.shape[0]
    counts = np.bincount(assign, minlength=k)
    sums = np.zeros_like(centers)
    np.add.at(sums, assign, X)
    updated = centers.copy()
    filled = counts > 0
    updated[filled] = sums[filled] / counts[filled, None]
    return updated


def _nearest(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.argmin(_squared_distances(X, centers), axis=1)


def _repair_empty(X: np.ndarray, assign: np.ndarray, centers: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    k = centers.shape[0]
    counts = np.bincount(assign, minlength=k)
    if counts.min() > 0:
        return assign, centers
    assign = assign.copy()
    centers = centers.copy()
    for empty in np.flatnonzero(counts == 0):
        donors = counts[assign] > 1
        distances = np.where(donors, ((X - centers[assign]) ** 2).sum(axis=1), -1.0)
        moved = int(np.argmax(distances))
        log.debug("repairing empty cluster %d with point %d", empty, moved)
        counts[assign[moved]] -= 1
        counts[empty] += 1
        assign[moved] = empty
        centers[empty] = X[moved]
    return assign, centers


def _lloyd(
    X: np.ndarray,
    centers: np.ndarray,
    max_iter: int,
    tol: float,
    trace: Optional[List[float]] = None,
) -> Tuple[np.ndarray, np.ndarray, float, int]:
    """Lloyd iterations, transfer refinement and a nearest-centroid polish; ``trace`` collects the SSE per iteration."""

    assign, centers = _repair_empty(X, _nearest(X, centers), centers)
    sse = _sse(X, centers, assign)
    if trace is not None:
        trace.append(sse)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        centers = _means(X, assign, centers)
        updated, centers = _repair_empty(X, _nearest(X, centers), centers)
        updated_sse = _sse(X, centers, updated)
        if trace is not None:
            trace.append(updated_sse)
        if updated_sse > sse + _MONOTONE_SLACK * max(sse, 1.0):
            raise ClusterError(f"Lloyd iteration {iterations} increased SSE from {sse!r} to {updated_sse!r}")
        stable = np.array_equal(updated, assign)
        small = sse - updated_sse <= tol * sse
        assign, sse = updated, updated_sse
        if stable or small:
            break

    assign = _transfer_refine(X, assign, centers.shape[0])
    centers = _means(X, assign, centers)
    for _ in range(max_iter):
        if _is_consistent(X, centers, assign):
            break
        assign, centers = _repair_empty(X, _nearest(X, centers), centers)
        centers = _means(X, assign, centers)
    else:
        log.warning("k-means polish did not reach a nearest-centroid fixed point")
    return centers, assign, _sse(X, centers, assign), iterations


def _transfer_refine(X: np.ndarray, assign: np.ndarray, k: int, max_passes: int = 50) -> np.ndarray:
    """Single-point transfers that strictly lower SSE, applied until none is left."""

    assign = assign.copy()
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, assign, X)
    for _ in range(max_passes):
        moved = False
        for index in range(X.shape[0]):
            source = assign[index]
            if counts[source] <= 1:
                continue
            centers = sums / np.maximum(counts, 1.0)[:, None]
            distances = ((centers - X[index]) ** 2).sum(axis=1)
            removal = counts[source] / (counts[source] - 1.0) * distances[source]
            addition = counts / (counts + 1.0) * distances
            addition[source] = np.inf
            target = int(np.argmin(addition))
            if addition[target] < removal - 1e-12 * max(removal, 1e-300):
                sums[source] -= X[index]
                sums[target] += X[index]
                counts[source] -= 1
                counts[target] += 1
                assign[index] = target
                moved = True
        if not moved:
            break
    return assign


def _is_consistent(X: np.ndarray, centers: np.ndarray, assign: np.ndarray) -> bool:
    # nearest centroid with ties to the lowest index; empty-cluster repair only applies to degenerate data
    expected, _ = _repair_empty(X, _nearest(X, centers), centers)
    return bool(np.array_equal(expected, assign))


def elbow_select_k(
    points: np.ndarray,
    k_min: int = 1,
    k_max: int = 10,
    seed: int = 0,
    restarts: int = 10,
    row_keys: Optional[Sequence[str]] = None,
    n_jobs: int = 1,
) -> ElbowCurve:
    """
    Fit every k in ``[k_min, k_max]`` and pick the knee by maximal distance to the chord
    joining the first and last point of the min-max scaled curve.

    A non-monotone step is refitted with four times the restarts; a still-rising step is
    warm-started from the previous solution plus its farthest point.

    Deutsch:
        Elbow-Methode: Auswahl von k über den maximalen Abstand zur Sehne.
    """

    X = np.asarray(points, dtype=np.float64)
    if k_min < 1 or k_max < k_min:
        raise ClusterError(f"invalid k range {k_min}..{k_max}")
    if k_max > X.shape[0]:
        raise ClusterError(f"k_max={k_max} exceeds the number of points {X.shape[0]}")

    models: Dict[int, KMeansModel] = {}
    retried: List[int] = []
    for k in range(k_min, k_max + 1):
        model = kmeans_fit(X, k, seed, restarts=restarts, row_keys=row_keys, n_jobs=n_jobs)
        previous = models.get(k - 1)
        if previous is not None and _rises(previous.sse, model.sse):
            log.warning("sse rose from k=%d to k=%d; retrying with %d restarts", k - 1, k,
                        restarts * RETRY_RESTART_FACTOR)
            retried.append(k)
            model = kmeans_fit(X, k, seed, restarts=restarts * RETRY_RESTART_FACTOR, row_keys=row_keys, n_jobs=n_jobs)
            if _rises(previous.sse, model.sse):
                model = _split_farthest(X, previous, seed, row_keys)
        models[k] = model

    curve_points = tuple((k, models[k].sse) for k in range(k_min, k_max + 1))
    chosen = _knee(curve_points)
    log.info("elbow curve over k=%d..%d chose k=%d", k_min, k_max, chosen)
    return ElbowCurve(points=curve_points, chosen_k=chosen, retried=tuple(retried), models=models)


def _rises(before: float, after: float) -> bool:
    return after > before + _MONOTONE_SLACK * max(before, 1.0)


def _split_farthest(X: np.ndarray, previous: KMeansModel, seed: int, row_keys: Optional[Sequence[str]]) -> KMeansModel:
    distances = ((X - previous.centroids[previous.assignments]) ** 2).sum(axis=1)
    farthest = int(np.argmax(distances))
    start = np.vstack([previous.centroids, X[farthest]])
    return kmeans_fit(X, previous.k + 1, seed, row_keys=row_keys, warm_start=start)


def _knee(curve: Sequence[Tuple[int, float]]) -> int:
    ks = np.array([k for k, _ in curve], dtype=np.float64)
    sse = np.array([value for _, value in curve], dtype=np.float64)
    if len(curve) < 3 or np.ptp(sse) == 0.0:
        return int(ks[0])
    x = (ks - ks.min()) / np.ptp(ks)
    y = (sse - sse.min()) / np.ptp(sse)
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    distance = np.abs(dy * (x - x[0]) - dx * (y - y[0])) / np.hypot(dx, dy)
    return int(ks[int(np.argmax(distance))])


def assign_risk_labels(model: KMeansModel, rates: np.ndarray) -> RiskLabeling:
    """
    Rank clusters by mean positive rate (descending), then mean death rate, then index.

    Statistics use the raw rates and the sample standard deviation (0 for singletons).

    Deutsch:
        Ordnet Cluster nach mittlerer Positivrate absteigend Risikorängen zu.
    """

    rates = np.asarray(rates, dtype=np.float64)
    if rates.shape != (model.assignments.shape[0], 2):
        raise ClusterError("rates must be an n x 2 array aligned with the assignments")

    summaries = []
    for cluster in range(model.k):
        members = rates[model.assignments == cluster]
        if members.shape[0] == 0:
            raise ClusterError(f"cluster {cluster} is empty")
        summaries.append((cluster, members))

    means = {cluster: members.mean(axis=0) for cluster, members in summaries}
    ordering = sorted(range(model.k), key=lambda cluster: (-means[cluster][0], -means[cluster][1], cluster))
    rank_of_cluster = [0] * model.k
    for position, cluster in enumerate(ordering):
        rank_of_cluster[cluster] = position + 1

    stats = []
    for cluster, members in summaries:
        rank = rank_of_cluster[cluster]
        sds = members.std(axis=0, ddof=1) if members.shape[0] > 1 else np.zeros(2)
        quartiles = np.percentile(members, [0, 25, 50, 75, 100], axis=0)
        stats.append(
            ClusterStats(
                cluster=cluster,
                rank=rank,
                label=risk_label_name(rank, model.k),
                count=int(members.shape[0]),
                mean_positive_rate=float(means[cluster][0]),
                sd_positive_rate=float(sds[0]),
                mean_death_rate=float(means[cluster][1]),
                sd_death_rate=float(sds[1]),
                positive_quartiles=tuple(float(value) for value in quartiles[:, 0]),
                death_quartiles=tuple(float(value) for value in quartiles[:, 1]),
            )
        )
    return RiskLabeling(rank_of_cluster=tuple(rank_of_cluster), stats=tuple(stats))


def risk_label_name(rank: int, k: int) -> str:
    if k == 3:
        return ("High", "Medium", "Low")[rank - 1]
    return f"Risk-{rank}"
