"""
Gaussian discriminant classifiers (LDA with pooled covariance, QDA per class).

Deutsch:
    Lineare und quadratische Diskriminanzanalyse.
"""

from __future__ import annotations

from typing import Any, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from ..models import ModelSpec, TrainedModel
from . import BaseClassifier, LearnError, encode_labels, labels_from_scores, register


def _ridge(covariance: np.ndarray, epsilon: float) -> np.ndarray:
    p = covariance.shape[0]
    scale = np.trace(covariance) / p
    if scale <= 0.0:
        scale = 1.0
    return covariance + epsilon * scale * np.eye(p)


def _invert(covariance: np.ndarray, kind: str) -> Tuple[np.ndarray, float]:
    sign, log_det = np.linalg.slogdet(covariance)
    if sign <= 0 or not np.isfinite(log_det):
        raise LearnError(f"{kind}: covariance is not positive definite")
    return linalg.inv(covariance), float(log_det)


def _posteriors(log_scores: np.ndarray) -> np.ndarray:
    return np.exp(log_scores - logsumexp(log_scores, axis=1, keepdims=True))


class _Discriminant(BaseClassifier):
    defaults = {"ridge": 1e-6}

    def check(self, name: str, value: Any) -> Optional[str]:
        if name == "ridge" and not (isinstance(value, (int, float)) and value >= 0):
            return "must be >= 0"
        return None


class LinearDiscriminant(_Discriminant):
    kind = "LDA"

    def fit(self, spec: ModelSpec, X: np.ndarray, y: np.ndarray, n_jobs: int = 1) -> TrainedModel:
        params = self.resolve(spec.hyperparameters)
        classes, codes = encode_labels(y)
        K = classes.shape[0]
        means = np.vstack([X[codes == c].mean(axis=0) for c in range(K)])
        centered = X - means[codes]
        pooled = centered.T @ centered / max(X.shape[0] - K, 1)
        precision, _ = _invert(_ridge(pooled, params["ridge"]), self.kind)
        priors = np.bincount(codes, minlength=K) / X.shape[0]
        return TrainedModel(
            kind=self.kind,
            classes=classes,
            n_features=X.shape[1],
            params={"means": means, "precision": precision, "log_priors": np.log(priors)},
        )

    def predict(self, model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        coef, intercept = lda_coefficients(model)
        probabilities = _posteriors(X @ coef.T + intercept)
        return labels_from_scores(model, probabilities), probabilities


def lda_coefficients(model: TrainedModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linear discriminant functions ``X @ coef.T + intercept`` of a fitted LDA model.

    ``coef[c] = precision @ mean_c`` and ``intercept[c] = -mean_c' precision mean_c / 2 + log prior_c``.
    """

    if model.kind != "LDA":
        raise LearnError(f"lda_coefficients needs an LDA model, got {model.kind}")
    means = np.asarray(model.params["means"])
    precision = np.asarray(model.params["precision"])
    coef = means @ precision
    intercept = -0.5 * (coef * means).sum(axis=1) + np.asarray(model.params["log_priors"])
    return coef, intercept


class QuadraticDiscriminant(_Discriminant):
    kind = "QDA"

    def fit(self, spec: ModelSpec, X: np.ndarray, y: np.ndarray, n_jobs: int = 1) -> TrainedModel:
        params = self.resolve(spec.hyperparameters)
        classes, codes = encode_labels(y)
        K, p = classes.shape[0], X.shape[1]
        means = np.zeros((K, p))
        precisions = np.zeros((K, p, p))
        log_dets = np.zeros(K)
        for c in range(K):
            members = X[codes == c]
            if members.shape[0] < 2:
                raise LearnError(f"QDA: class {classes[c]} needs at least 2 samples")
            means[c] = members.mean(axis=0)
            centered = members - means[c]
            covariance = _ridge(centered.T @ centered / (members.shape[0] - 1), params["ridge"])
            precisions[c], log_dets[c] = _invert(covariance, self.kind)
        priors = np.bincount(codes, minlength=K) / X.shape[0]
        return TrainedModel(
            kind=self.kind,
            classes=classes,
            n_features=p,
            params={"means": means, "precisions": precisions, "log_dets": log_dets, "log_priors": np.log(priors)},
        )

    def predict(self, model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        means = np.asarray(model.params["means"])
        precisions = np.asarray(model.params["precisions"])
        log_dets = np.asarray(model.params["log_dets"])
        log_priors = np.asarray(model.params["log_priors"])
        scores = np.empty((X.shape[0], means.shape[0]))
        for c in range(means.shape[0]):
            centered = X - means[c]
            mahalanobis = np.einsum("ij,jk,ik->i", centered, precisions[c], centered)
            scores[:, c] = -0.5 * log_dets[c] - 0.5 * mahalanobis + log_priors[c]
        probabilities = _posteriors(scores)
        return labels_from_scores(model, probabilities), probabilities


register(LinearDiscriminant())
register(QuadraticDiscriminant())
