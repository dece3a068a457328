"""
One-vs-rest kernel support vector machines trained with SMO.

The binary solver follows the LIBSVM formulation: dual ``min 1/2 a'Qa - e'a`` subject to
``0 <= a <= C`` and ``y'a = 0``, with second-order working set selection.

Deutsch:
    One-vs-Rest-Kernel-SVM mit SMO-Löser.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional, Tuple

import numba
import numpy as np
from scipy.spatial.distance import cdist

from ..models import ModelSpec, TrainedModel
from ..parallel import map_ordered
from . import BaseClassifier, encode_labels, labels_from_scores, register

log = logging.getLogger(__name__)

TAU = 1e-12
CACHE_NUMBA = False


@numba.njit(nogil=True, cache=CACHE_NUMBA)
def smo_solve(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    iterations = 0
    gap = np.inf
    converged = False
    while True:
        # maximal violating index i, then j by second-order gain
        g_max = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                value = -y[t] * G[t]
                if value > g_max:
                    g_max = value
                    i = t
        g_min = np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                value = -y[t] * G[t]
                if value < g_min:
                    g_min = value
                if i >= 0:
                    b = g_max - value
                    if b > 0:
                        a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if a <= 0:
                            a = TAU
                        if -(b * b) / a < best:
                            best = -(b * b) / a
                            j = t
        gap = g_max - g_min if i >= 0 else 0.0
        if i < 0 or j < 0 or gap < tol:
            converged = True
            break
        if iterations >= max_iter:
            break

        old_i = alpha[i]
        old_j = alpha[j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        delta_i = alpha[i] - old_i
        delta_j = alpha[j] - old_j
        for t in range(n):
            G[t] += y[t] * (y[i] * K[t, i] * delta_i + y[j] * K[t, j] * delta_j)
        iterations += 1

    upper = np.inf
    lower = -np.inf
    free = 0
    free_sum = 0.0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                upper = min(upper, yg)
            else:
                lower = max(lower, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                upper = min(upper, yg)
            else:
                lower = max(lower, yg)
        else:
            free += 1
            free_sum += yg
    if free > 0:
        rho = free_sum / free
    else:
        rho = (upper + lower) / 2.0
    return alpha, rho, gap, iterations, converged


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str, gamma: float, degree: int, coef0: float) -> np.ndarray:
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        return np.exp(-gamma * cdist(A, B, "sqeuclidean"))
    if kernel == "poly":
        return (gamma * (A @ B.T) + coef0) ** degree
    raise ValueError(f"unknown kernel {kernel!r}")


def default_gamma(X: np.ndarray) -> float:
    """``1 / (p * mean column variance)``; 1.0 when the data has no spread."""

    spread = float(X.var(axis=0).mean()) * X.shape[1]
    return 1.0 / spread if spread > 0 else 1.0


class KernelSVM(BaseClassifier):
    probabilistic = False

    def __init__(self, kind: str, kernel: str) -> None:
        self.kind = kind
        self.kernel = kernel
        defaults: Dict[str, Any] = {"C": 1.0, "tol": 1e-3, "max_iter": None}
        if kernel in ("rbf", "poly"):
            defaults["gamma"] = None
        if kernel == "poly":
            defaults.update({"degree": 3, "coef0": 1.0})
        self.defaults = defaults

    def check(self, name: str, value: Any) -> Optional[str]:
        if name in ("C", "tol") and not (isinstance(value, (int, float)) and value > 0):
            return "must be > 0"
        if name == "gamma" and value is not None and not (isinstance(value, (int, float)) and value > 0):
            return "must be > 0 or null"
        if name in ("degree", "max_iter") and value is not None and not (isinstance(value, int) and value >= 1):
            return "must be an integer >= 1"
        if name == "coef0" and not isinstance(value, (int, float)):
            return "must be a number"
        return None

    def fit(self, spec: ModelSpec, X: np.ndarray, y: np.ndarray, n_jobs: int = 1) -> TrainedModel:
        params = self.resolve(spec.hyperparameters)
        classes, codes = encode_labels(y)
        n = X.shape[0]
        gamma = float(params.get("gamma") or default_gamma(X))
        degree = int(params.get("degree", 3))
        coef0 = float(params.get("coef0", 1.0))
        max_iter = int(params["max_iter"] or 10 * n)
        C = float(params["C"])
        gram = kernel_matrix(X, X, self.kernel, gamma, degree, coef0)

        def _one_vs_rest(position: int) -> Tuple[np.ndarray, float, float, int, bool]:
            target = np.where(codes == position, 1.0, -1.0)
            return smo_solve(gram, target, C, float(params["tol"]), max_iter)

        solutions = map_ordered(_one_vs_rest, range(classes.shape[0]), n_jobs)
        alphas = np.vstack([solution[0] for solution in solutions])
        support = np.flatnonzero((alphas > 0).any(axis=0))
        signs = np.where(codes[None, :] == np.arange(classes.shape[0])[:, None], 1.0, -1.0)
        warnings: List[str] = []
        for position, solution in enumerate(solutions):
            if not solution[4]:
                message = f"SMO did not converge for class {classes[position]} (gap {solution[2]:.3g})"
                log.warning("%s: %s", self.kind, message)
                warnings.append(message)
        return TrainedModel(
            kind=self.kind,
            classes=classes,
            n_features=X.shape[1],
            params={
                "kernel": self.kernel,
                "C": C,
                "gamma": gamma,
                "degree": degree,
                "coef0": coef0,
                "support_vectors": X[support].copy(),
                "dual_coef": (alphas * signs)[:, support],
                "bias": np.array([-solution[1] for solution in solutions]),
                "kkt_gap": np.array([solution[2] for solution in solutions]),
                "iterations": [int(solution[3]) for solution in solutions],
                "converged": [bool(solution[4]) for solution in solutions],
            },
            warnings=tuple(warnings),
        )

    def predict(self, model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        return labels_from_scores(model, decision_function(model, X)), None


def decision_function(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """One-vs-rest decision values, one column per class."""

    params = model.params
    gram = kernel_matrix(
        np.asarray(X, dtype=np.float64),
        np.asarray(params["support_vectors"]),
        str(params["kernel"]),
        float(params["gamma"]),
        int(params["degree"]),
        float(params["coef0"]),
    )
    return gram @ np.asarray(params["dual_coef"]).T + np.asarray(params["bias"])


register(KernelSVM("SVM_LINEAR", "linear"))
register(KernelSVM("SVM_RBF", "rbf"))
register(KernelSVM("SVM_POLY", "poly"))
