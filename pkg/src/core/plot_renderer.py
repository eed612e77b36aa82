"""
Trend plots of summarized fidelity gaps.

One SVG line chart per (objective, metric, q_kind): sweep value on the x
axis, percent gap on the y axis, one series per model variant with CI
whiskers. Linear models use circles and MLPs triangles; variants that
drop an attribute are drawn hollow.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)

PLOTTED_METRICS = ("mean_gap", "max_gap", "bb_acc_gap")
METRIC_LABELS = {
    "mean_gap": "Percent mean fidelity gap",
    "max_gap": "Percent maximum fidelity gap",
    "bb_acc_gap": "Black-box accuracy gap (A=1 - A=0), percent",
}
SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

plt.rcParams["svg.hashsalt"] = "xdaudit"


def marker_style(variant: str) -> Dict[str, str]:
    """Circle for LR, triangle for MLP; hollow when an attribute is dropped."""
    family = variant.split("_", 1)[0].upper()
    style = {"marker": "o" if family == "LR" else "^"}
    if "_no" in variant:
        style["markerfacecolor"] = "none"
    return style


def _x_positions(values: Sequence) -> List[float]:
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError):
        return [float(k) for k in range(len(values))]


def build_plot_series(summary: pd.DataFrame, objective: str, metric: str,
                      q_kind: str) -> Dict[str, pd.DataFrame]:
    """
    Per-variant series in percent.

    Returns:
        variant -> frame with columns x, label, y, low, high (all y-like
        columns are summary values x 100)
    """
    part = summary[(summary["objective"] == objective) & (summary["metric"] == metric)
                   & (summary["q_kind"] == q_kind) & (summary["group_or_all"].astype(str) == "all")]
    series: Dict[str, pd.DataFrame] = {}
    for variant, rows in part.groupby("model_variant", sort=False):
        labels = list(rows["sweep_value"])
        series[variant] = pd.DataFrame({
            "x": _x_positions(labels),
            "label": [str(v) for v in labels],
            "y": rows["mean"].to_numpy(dtype=float) * 100.0,
            "low": rows["ci_low"].to_numpy(dtype=float) * 100.0,
            "high": rows["ci_high"].to_numpy(dtype=float) * 100.0,
        })
    return series


def render_plots(summary: pd.DataFrame, out_dir: Union[str, Path]) -> List[Path]:
    """
    Write one SVG per (objective, metric, q_kind) found in ``summary``.

    Output is byte-stable for identical input. An empty summary writes
    nothing and logs a warning.

    Raises:
        OSError: ``out_dir`` cannot be created or written
    """
    if summary is None or summary.empty:
        logger.warning("Summary is empty; no plots written")
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    combos = (summary[summary["metric"].isin(PLOTTED_METRICS)]
              [["objective", "metric", "q_kind", "sweep_param"]].drop_duplicates())
    for objective, metric, q_kind, sweep_param in combos.itertuples(index=False):
        series = build_plot_series(summary, objective, metric, q_kind)
        if not series:
            continue
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for k, (variant, data) in enumerate(series.items()):
            yerr = None
            if not data[["low", "high"]].isna().all().all():
                yerr = np.vstack([(data["y"] - data["low"]).clip(lower=0).fillna(0),
                                  (data["high"] - data["y"]).clip(lower=0).fillna(0)])
            ax.errorbar(data["x"], data["y"], yerr=yerr, label=variant, capsize=3,
                        color=SERIES_COLORS[k % len(SERIES_COLORS)], **marker_style(variant))
        first = next(iter(series.values()))
        if first["label"].tolist() and not _numeric(first["label"]):
            ax.set_xticks(first["x"])
            ax.set_xticklabels(first["label"])
        ax.set_xlabel(sweep_param)
        ax.set_ylabel(METRIC_LABELS.get(metric, metric))
        ax.set_title(f"{objective} ({q_kind})")
        ax.legend(frameon=False)
        fig.tight_layout()
        path = out_dir / f"{objective}_{metric}_{q_kind}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
        logger.info(f"Plot written to {path}")
    return written


def _numeric(labels: pd.Series) -> bool:
    try:
        [float(v) for v in labels]
        return True
    except ValueError:
        return False
