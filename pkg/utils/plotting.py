"""Static SVG figures: learning curves and smoothness/return Pareto panels.

Output is byte-identical for identical inputs: fixed figure size, fixed SVG id salt, text
kept as text and no creation date.
"""
import logging
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams.update(
    {
        "font.family": "DejaVu Sans",
        "axes.unicode_minus": False,
        "svg.hashsalt": "gsde-lab",
        "svg.fonttype": "none",
        "path.simplify": False,
    }
)
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from core.errors import CsvSchemaError  # noqa: E402
from utils.metrics import normalize_return, std_error  # noqa: E402

logger = logging.getLogger(__name__)

FIGSIZE_CURVE = (6.4, 4.0)
PANEL_SIZE = (4.0, 3.6)


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    logger.info("figure written to %s", path)


def curve_series(runs):
    """Mean and std-error of eval_return per timestep across ``runs`` (each a RunLog)."""
    by_step = defaultdict(list)
    for log in runs:
        for row in log.rows:
            if row.eval_return is not None and np.isfinite(row.eval_return):
                by_step[row.timestep].append(row.eval_return)
    steps = sorted(by_step)
    means = np.array([np.mean(by_step[s]) for s in steps])
    errors = np.array([std_error(by_step[s]) for s in steps])
    return np.array(steps), means, errors


def plot_curves(groups, path, title="Evaluation return"):
    """``groups`` maps a label to the RunLogs of its seeds."""
    series = {label: curve_series(runs) for label, runs in sorted(groups.items())}
    if not any(len(steps) for steps, _, _ in series.values()):
        raise CsvSchemaError("no evaluation rows to plot")
    fig, ax = plt.subplots(figsize=FIGSIZE_CURVE)
    for label, (steps, means, errors) in series.items():
        if not len(steps):
            continue
        line, = ax.plot(steps, means, label=label)
        ax.fill_between(steps, means - errors, means + errors, color=line.get_color(), alpha=0.25, linewidth=0)
    ax.set_xlabel("Timesteps")
    ax.set_ylabel("Mean evaluation return (± s.e.)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def _point_label(row):
    return row["label"] if row.get("interval") is None else f"{row['label']}-{row['interval']}"


def normalize_panel(rows):
    best = max(r["mean_return"] for r in rows)
    scale = abs(best) if best != 0 else 1.0
    return [dict(r, normalized=normalize_return(r["mean_return"], best), normalized_se=r["se_return"] / scale) for r in rows]


def macro_average(panels):
    """Per configuration label: mean over tasks of normalised return and continuity cost."""
    pooled = defaultdict(list)
    for rows in panels.values():
        for r in rows:
            pooled[_point_label(r)].append(r)
    macro = []
    for label, rows in sorted(pooled.items()):
        macro.append({
            "label": label,
            "interval": None,
            "normalized": float(np.mean([r["normalized"] for r in rows])),
            "normalized_se": std_error([r["normalized"] for r in rows]),
            "mean_ctrain": float(np.mean([r["mean_ctrain"] for r in rows])),
            "se_ctrain": std_error([r["mean_ctrain"] for r in rows]),
        })
    return macro


def _scatter(ax, rows, title):
    for r in rows:
        ax.errorbar(r["mean_ctrain"], r["normalized"], xerr=r["se_ctrain"], yerr=r["normalized_se"], fmt="o", capsize=3)
        ax.annotate(_point_label(r), (r["mean_ctrain"], r["normalized"]), textcoords="offset points", xytext=(4, 4),
                    fontsize=7)
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("Train continuity cost")
    ax.grid(True, alpha=0.3)


def plot_pareto(panels, path):
    """``panels`` maps a task name to its Pareto rows; adds a macro-average panel when there are several tasks."""
    panels = {task: rows for task, rows in sorted(panels.items()) if rows}
    if not panels:
        raise CsvSchemaError("no Pareto rows to plot")
    normalized = {task: normalize_panel(rows) for task, rows in panels.items()}
    count = len(normalized) + (1 if len(normalized) > 1 else 0)
    fig, axes = plt.subplots(1, count, figsize=(PANEL_SIZE[0] * count, PANEL_SIZE[1]), squeeze=False)
    axes = axes[0]
    for ax, (task, rows) in zip(axes, normalized.items()):
        _scatter(ax, rows, f"{task} (return / per-task best)")
    if len(normalized) > 1:
        _scatter(axes[-1], macro_average(normalized), "macro average over tasks")
    axes[0].set_ylabel("Normalised return (best = 1.0)")
    fig.tight_layout()
    _save(fig, path)
