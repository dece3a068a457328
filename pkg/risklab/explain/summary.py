"""
Per-class SHAP rankings and dependence series.

Deutsch:
    Rangfolgen nach mittlerem |SHAP| je Klasse und Abhängigkeitsreihen (Rohwert, Attribution).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..models import ShapMatrix
from . import ExplainError
from .importance import rank_features

LONG_COLUMNS = ("class_label", "feature", "fips", "feature_value", "shap_value")


@dataclass(frozen=True, eq=False)
class ShapSummary:
    """
    ``mean_abs`` is p × K; ``ranks[c]`` holds the 1-based rank of every feature for class c.
    ``feature_values`` are the raw (unstandardized) inputs behind the dependence series.
    """

    feature_names: Tuple[str, ...]
    class_labels: Tuple[str, ...]
    mean_abs: np.ndarray
    ranks: np.ndarray
    feature_values: np.ndarray
    attributions: np.ndarray
    row_keys: Tuple[str, ...] = ()

    def ranking(self, class_label: str) -> List[str]:
        """Feature names of one class ordered from most to least important."""

        column = self.class_labels.index(class_label)
        order = np.argsort(self.ranks[column], kind="stable")
        return [self.feature_names[index] for index in order]

    def dependence(self, feature: str, class_label: str) -> Tuple[np.ndarray, np.ndarray]:
        """(raw feature value, attribution) pairs of every row for one feature and class."""

        if feature not in self.feature_names:
            raise KeyError(f"Unknown feature '{feature}'. Known: {', '.join(self.feature_names)}")
        j = self.feature_names.index(feature)
        c = self.class_labels.index(class_label)
        return self.feature_values[:, j].copy(), self.attributions[:, j, c].copy()

    def top_features(self, class_label: str, count: int) -> List[str]:
        return self.ranking(class_label)[:count]

    def long_frame(self, features: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """Row-per-sample table of the dependence series (class, feature, row order)."""

        chosen = list(features) if features is not None else list(self.feature_names)
        keys = list(self.row_keys) if self.row_keys else [str(i) for i in range(self.feature_values.shape[0])]
        frames = []
        for c, label in enumerate(self.class_labels):
            for feature in chosen:
                j = self.feature_names.index(feature)
                frames.append(
                    pd.DataFrame(
                        {
                            "class_label": label,
                            "feature": feature,
                            "fips": keys,
                            "feature_value": self.feature_values[:, j],
                            "shap_value": self.attributions[:, j, c],
                        }
                    )
                )
        if not frames:
            return pd.DataFrame(columns=list(LONG_COLUMNS))
        return pd.concat(frames, ignore_index=True)[list(LONG_COLUMNS)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature_names": list(self.feature_names),
            "class_labels": list(self.class_labels),
            "mean_abs": self.mean_abs.tolist(),
            "rankings": {label: self.ranking(label) for label in self.class_labels},
        }

    @staticmethod
    def rankings_from_dict(payload: Mapping[str, Any]) -> Dict[str, List[str]]:
        return {str(label): list(names) for label, names in payload["rankings"].items()}


def mean_abs_attribution(values: np.ndarray) -> np.ndarray:
    """Mean |attribution| per (feature, class), summed in sorted order so row order cannot matter."""

    magnitudes = np.sort(np.abs(values), axis=0)
    return magnitudes.sum(axis=0) / max(values.shape[0], 1)


def shap_summary(
    shap: ShapMatrix,
    X_raw: np.ndarray,
    feature_names: Sequence[str],
    class_labels: Sequence[str],
) -> ShapSummary:
    """
    Rank features per class by mean |SHAP| and keep every row's (value, attribution) pair.

    Equal means keep the feature order, so an all-zero matrix ranks features as given.

    Deutsch:
        Rangfolge je Klasse und Abhängigkeitsreihen für die Darstellung.
    """

    values = np.asarray(shap.values, dtype=np.float64)
    X_raw = np.asarray(X_raw, dtype=np.float64)
    if values.ndim != 3:
        raise ExplainError(f"SHAP values must be n x p x K, got shape {values.shape}")
    n, p, k = values.shape
    if X_raw.shape != (n, p):
        raise ExplainError(f"feature matrix shape {X_raw.shape} does not match SHAP values ({n}, {p})")
    if len(feature_names) != p or len(class_labels) != k:
        raise ExplainError("feature names or class labels do not match the SHAP matrix")
    mean_abs = mean_abs_attribution(values)
    ranks = np.vstack([rank_features(mean_abs[:, c]) for c in range(k)])
    return ShapSummary(
        feature_names=tuple(feature_names),
        class_labels=tuple(class_labels),
        mean_abs=mean_abs,
        ranks=ranks,
        feature_values=X_raw,
        attributions=values,
        row_keys=tuple(shap.row_keys),
    )
