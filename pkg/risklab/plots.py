"""
Static SVG figures for elbow curves, clusters, importances and SHAP values.

Figures are built with the object-oriented matplotlib API on the Agg canvas; the SVG
writer gets a fixed hash salt and no date so identical data gives identical bytes.

Deutsch:
    Statische SVG-Grafiken (Elbow-Kurve, Cluster, Wichtigkeiten, SHAP-Werte).
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .artifacts import ReportError, write_atomic  # noqa: E402
from .errors import ComputeError  # noqa: E402

log = logging.getLogger(__name__)

SVG_RC = {"svg.hashsalt": "risklab", "svg.fonttype": "none"}
RISK_COLORS = {"High": "#c0392b", "Medium": "#e67e22", "Low": "#27ae60"}
FALLBACK_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class PlotError(ComputeError):
    """Raised when a figure cannot be rendered. / Grafik nicht erzeugbar."""


def _require(data: pd.DataFrame, kind: str, columns: Sequence[str]) -> None:
    missing = [column for column in columns if column not in data.columns]
    if missing:
        raise PlotError(f"{kind}: input lacks columns {', '.join(missing)}")
    if data.empty:
        raise PlotError(f"{kind}: input has no rows")


def _label_color(label: str, position: int) -> str:
    return RISK_COLORS.get(label, FALLBACK_COLORS[position % len(FALLBACK_COLORS)])


def _ordered_labels(labels: pd.Series) -> List[str]:
    present = list(dict.fromkeys(str(item) for item in labels))
    known = [label for label in RISK_COLORS if label in present]
    return known + sorted(label for label in present if label not in RISK_COLORS)


def elbow_figure(data: pd.DataFrame) -> Figure:
    _require(data, "elbow", ("k", "sse", "chosen"))
    frame = data.sort_values("k")
    fig = Figure(figsize=(6.4, 4.2))
    ax = fig.add_subplot()
    ax.plot(frame["k"], frame["sse"], marker="o", color="#34495e", label="within-cluster SSE")
    chosen = frame[frame["chosen"].astype(bool)]
    ax.scatter(chosen["k"], chosen["sse"], s=160, facecolors="none", edgecolors="#c0392b", linewidths=2,
               zorder=3, label="chosen k")
    ax.set_xlabel("number of clusters k")
    ax.set_ylabel("within-cluster sum of squares")
    ax.set_title("Elbow method")
    ax.set_xticks(list(frame["k"]))
    ax.legend()
    return fig


def cluster_scatter_figure(data: pd.DataFrame) -> Figure:
    _require(data, "cluster_scatter", ("positive_rate", "death_rate", "risk_label"))
    fig = Figure(figsize=(6.4, 4.8))
    ax = fig.add_subplot()
    for position, label in enumerate(_ordered_labels(data["risk_label"])):
        members = data[data["risk_label"].astype(str) == label]
        color = _label_color(label, position)
        ax.scatter(members["positive_rate"], members["death_rate"], s=10, alpha=0.6, color=color,
                   label=f"{label} (n={len(members)})")
        ax.scatter([members["positive_rate"].mean()], [members["death_rate"].mean()], marker="X", s=140,
                   color=color, edgecolors="black", linewidths=1, zorder=3)
    ax.set_xlabel("positive rate")
    ax.set_ylabel("death rate")
    ax.set_title("County clusters by risk level (X marks centroids)")
    ax.legend()
    return fig


def importance_bars_figure(data: pd.DataFrame) -> Figure:
    _require(data, "importance_bars", ("feature", "mda_mean", "mdg"))
    fig = Figure(figsize=(11, max(3.5, 0.35 * len(data) + 1.5)))
    for position, (column, title) in enumerate((("mda_mean", "Mean decrease accuracy"),
                                                ("mdg", "Mean decrease in Gini"))):
        ax = fig.add_subplot(1, 2, position + 1)
        frame = data.sort_values(column, kind="stable")
        errors = frame["mda_sd"] if column == "mda_mean" and "mda_sd" in frame.columns else None
        ax.barh(frame["feature"], frame[column], xerr=errors, color="#2980b9", label=column)
        ax.set_xlabel("importance")
        ax.set_title(title)
        ax.legend(loc="lower right")
    fig.suptitle("Feature importance of the random forest")
    fig.tight_layout()
    return fig


def _class_rows(data: pd.DataFrame, class_label: Optional[str]) -> pd.DataFrame:
    label = class_label if class_label is not None else str(data["class_label"].iloc[0])
    rows = data[data["class_label"].astype(str) == label]
    if rows.empty:
        raise PlotError(f"no SHAP rows for class {label!r}")
    return rows


def shap_rank_dots_figure(data: pd.DataFrame, class_label: Optional[str] = None) -> Figure:
    _require(data, "shap_rank_dots", ("class_label", "feature", "feature_value", "shap_value"))
    rows = _class_rows(data, class_label)
    label = str(rows["class_label"].iloc[0])
    order = (
        rows.assign(magnitude=rows["shap_value"].abs())
        .groupby("feature", sort=True)["magnitude"]
        .mean()
        .sort_values(kind="stable")
    )
    fig = Figure(figsize=(7.5, max(3.5, 0.4 * len(order) + 1.5)))
    ax = fig.add_subplot()
    collection = None
    for position, feature in enumerate(order.index):
        members = rows[rows["feature"] == feature]
        values = members["feature_value"].to_numpy(dtype=np.float64)
        span = values.max() - values.min()
        scaled = (values - values.min()) / span if span > 0 else np.full(values.shape, 0.5)
        offsets = np.linspace(-0.3, 0.3, num=values.shape[0]) if values.shape[0] > 1 else np.zeros(1)
        collection = ax.scatter(members["shap_value"], position + offsets, c=scaled, cmap="coolwarm", vmin=0.0,
                                vmax=1.0, s=8, alpha=0.7)
    ax.set_yticks(range(len(order)))
    ax.set_yticklabels(list(order.index))
    ax.axvline(0.0, color="#7f8c8d", linewidth=0.8)
    ax.set_xlabel("SHAP value (impact on class probability)")
    ax.set_title(f"SHAP values for class {label}")
    if collection is not None:
        bar = fig.colorbar(collection, ax=ax)
        bar.set_label("feature value (low to high)")
    return fig


def shap_dependence_figure(data: pd.DataFrame, features: Optional[Sequence[str]] = None,
                           class_label: Optional[str] = None) -> Figure:
    _require(data, "shap_dependence", ("class_label", "feature", "feature_value", "shap_value"))
    rows = data if class_label is None else _class_rows(data, class_label)
    chosen = list(features) if features else list(dict.fromkeys(rows["feature"].astype(str)))
    labels = list(dict.fromkeys(rows["class_label"].astype(str)))
    panels = [(feature, label) for feature in chosen for label in labels]
    if not panels:
        raise PlotError("shap_dependence: nothing to draw")
    columns = min(len(labels), 4)
    lines = -(-len(panels) // columns)
    fig = Figure(figsize=(4.0 * columns, 3.2 * lines))
    for index, (feature, label) in enumerate(panels):
        ax = fig.add_subplot(lines, columns, index + 1)
        members = rows[(rows["feature"] == feature) & (rows["class_label"].astype(str) == label)]
        ax.scatter(members["feature_value"], members["shap_value"], s=6, alpha=0.6,
                   color=_label_color(label, labels.index(label)), label=label)
        ax.axhline(0.0, color="#7f8c8d", linewidth=0.8)
        ax.set_xlabel(feature)
        ax.set_ylabel("SHAP value")
        ax.set_title(f"{feature} / {label}")
        ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    return fig


def correlation_heatmap_figure(data: pd.DataFrame) -> Figure:
    _require(data, "correlation_heatmap", ("feature",))
    names = [str(name) for name in data["feature"]]
    matrix = data[names].to_numpy(dtype=np.float64)
    fig = Figure(figsize=(1.0 + 0.55 * len(names), 0.5 + 0.55 * len(names)))
    ax = fig.add_subplot()
    image = ax.imshow(matrix, cmap="RdBu_r", vmin=-1.0, vmax=1.0)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names)
    for i in range(len(names)):
        for j in range(len(names)):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center", fontsize=6)
    ax.set_title("Pearson correlation of standardized predictors")
    bar = fig.colorbar(image, ax=ax)
    bar.set_label("correlation")
    fig.tight_layout()
    return fig


def cluster_boxplot_figure(data: pd.DataFrame) -> Figure:
    _require(data, "cluster_boxplot", ("positive_rate", "death_rate", "risk_label"))
    labels = _ordered_labels(data["risk_label"])
    fig = Figure(figsize=(9, 4.2))
    for position, column in enumerate(("positive_rate", "death_rate")):
        ax = fig.add_subplot(1, 2, position + 1)
        groups = [data.loc[data["risk_label"].astype(str) == label, column].to_numpy() for label in labels]
        parts = ax.boxplot(groups, patch_artist=True)
        for index, box in enumerate(parts["boxes"]):
            box.set_facecolor(_label_color(labels[index], index))
        ax.set_xticks(range(1, len(labels) + 1))
        ax.set_xticklabels(labels)
        ax.set_xlabel("risk level")
        ax.set_ylabel(column.replace("_", " "))
        ax.set_title(f"{column.replace('_', ' ')} by risk level")
        ax.legend(parts["boxes"], labels, loc="upper right", fontsize="small")
    fig.tight_layout()
    return fig


PLOT_KINDS: Dict[str, Callable[..., Figure]] = {
    "elbow": elbow_figure,
    "cluster_scatter": cluster_scatter_figure,
    "importance_bars": importance_bars_figure,
    "shap_rank_dots": shap_rank_dots_figure,
    "shap_dependence": shap_dependence_figure,
    "correlation_heatmap": correlation_heatmap_figure,
    "cluster_boxplot": cluster_boxplot_figure,
}


def build_figure(kind: str, data: pd.DataFrame, **options: object) -> Figure:
    builder = PLOT_KINDS.get(kind)
    if builder is None:
        raise PlotError(f"Unknown plot kind '{kind}'. Known: {', '.join(sorted(PLOT_KINDS))}")
    return builder(data, **options)


def render_plot(kind: str, data: pd.DataFrame, path: Path, **options: object) -> Path:
    """
    Render one figure kind from its tabular input and write it as a standalone SVG.

    Deutsch:
        Erzeugt eine Grafik und schreibt sie atomar als SVG-Datei.
    """

    fig = build_figure(kind, data, **options)
    with matplotlib.rc_context(SVG_RC):
        try:
            write_atomic(Path(path), lambda target: fig.savefig(target, format="svg", metadata={"Date": None}))
        except ReportError as exc:
            raise PlotError(str(exc)) from exc
    log.debug("rendered %s -> %s", kind, path)
    return Path(path)
