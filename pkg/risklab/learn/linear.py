"""
Multinomial logistic regression fitted by full-batch gradient descent.

Deutsch:
    Multinomiale logistische Regression mit Gradientenverfahren und Backtracking.
"""

from __future__ import annotations

import logging
import math
from typing import Any, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from ..models import ModelSpec, TrainedModel
from . import BaseClassifier, LearnError, encode_labels, labels_from_scores, register

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MIN_STEP = 1e-20


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def mlr_objective(W: np.ndarray, X: np.ndarray, Y: np.ndarray, l2_penalty: float) -> Tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood plus ``l2_penalty * ||W||^2`` over the non-intercept
    weights, and its gradient.

    ``W`` is K × (p + 1) with intercepts in column 0, ``Y`` is the n × K one-hot target.
    """

    Z = _with_intercept(X)
    scores = Z @ W.T
    n = X.shape[0]
    nll = float((logsumexp(scores, axis=1) - (scores * Y).sum(axis=1)).sum() / n)
    penalized = W.copy()
    penalized[:, 0] = 0.0
    value = nll + l2_penalty * float((penalized**2).sum())
    gradient = (softmax(scores, axis=1) - Y).T @ Z / n + 2.0 * l2_penalty * penalized
    return value, gradient


class MultinomialLogit(BaseClassifier):
    kind = "MLR"
    defaults = {"l2_penalty": 1e-4, "max_iter": 500, "tol": 1e-6}

    def check(self, name: str, value: Any) -> Optional[str]:
        if name == "l2_penalty" and not (isinstance(value, (int, float)) and value >= 0):
            return "must be >= 0"
        if name == "max_iter" and not (isinstance(value, int) and value >= 1):
            return "must be an integer >= 1"
        if name == "tol" and not (isinstance(value, (int, float)) and value > 0):
            return "must be > 0"
        return None

    def fit(self, spec: ModelSpec, X: np.ndarray, y: np.ndarray, n_jobs: int = 1) -> TrainedModel:
        params = self.resolve(spec.hyperparameters)
        classes, codes = encode_labels(y)
        Y = np.eye(classes.shape[0])[codes]
        W = np.zeros((classes.shape[0], X.shape[1] + 1))
        value, gradient = mlr_objective(W, X, Y, params["l2_penalty"])
        history = [value]
        step = 1.0
        converged = False
        iteration = 0
        for iteration in range(1, params["max_iter"] + 1):
            slope = float((gradient**2).sum())
            if slope == 0.0:
                converged = True
                break
            while True:
                candidate = W - step * gradient
                candidate_value, candidate_gradient = mlr_objective(candidate, X, Y, params["l2_penalty"])
                if not math.isfinite(candidate_value):
                    raise LearnError("MLR: non-finite loss during optimization")
                if candidate_value <= value - ARMIJO_C * step * slope:
                    break
                step *= 0.5
                if step < MIN_STEP:
                    raise LearnError("MLR: line search failed to find a descent step")
            change = abs(value - candidate_value) / max(abs(value), 1e-300)
            W, value, gradient = candidate, candidate_value, candidate_gradient
            history.append(value)
            step = min(step * 2.0, 1e6)
            if change < params["tol"]:
                converged = True
                break
        if not converged:
            log.debug("MLR stopped after %d iterations (objective %.6g)", iteration, value)
        return TrainedModel(
            kind=self.kind,
            classes=classes,
            n_features=X.shape[1],
            params={
                "weights": W,
                "objective_history": np.asarray(history),
                "iterations": iteration,
                "converged": converged,
                "l2_penalty": float(params["l2_penalty"]),
            },
        )

    def predict(self, model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        probabilities = softmax(_with_intercept(X) @ np.asarray(model.params["weights"]).T, axis=1)
        return labels_from_scores(model, probabilities), probabilities


register(MultinomialLogit())
