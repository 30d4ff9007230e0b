"""Matplotlib figure rendering for reports.

Figures are built on explicit Agg canvases rather than pyplot, so no
global backend state is touched and rendering works headless. Every
function writes a PNG and returns the path it wrote.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .attribution import AttributionMap
from .training import CrossValReport, TrainReport


def _new_fig(width=7.0, height=4.2) -> Figure:
    fig = Figure(figsize=(width, height), dpi=120)
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    return path


def plot_fold_accuracies(report: CrossValReport, path) -> Path:
    """Bar chart of per-fold test accuracy with the mean as a line."""
    fig = _new_fig()
    ax = fig.add_subplot(111)
    folds = [r.fold_index for r in report.fold_results]
    accs = report.accuracies
    ax.bar(folds, accs, color="#4878cf", label="fold accuracy")
    if accs:
        ax.axhline(report.mean_accuracy, color="#d65f5f", linestyle="--",
                   label=f"mean = {report.mean_accuracy:.3f}")
    ax.axhline(0.5, color="gray", linewidth=0.8, label="chance")
    ax.set_xlabel("fold")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.set_xticks(folds)
    ax.set_title(f"{report.task}, {report.window_s:g} s windows")
    ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def plot_training_curves(report: TrainReport, path, title: str = "") -> Path:
    """Loss curves plus validation accuracy on a twin axis."""
    fig = _new_fig()
    ax = fig.add_subplot(111)
    epochs = np.arange(1, report.epochs_run() + 1)
    ax.plot(epochs, report.train_loss, marker="o", label="train loss")
    ax.plot(epochs, report.val_loss, marker="s", label="val loss")
    ax.axvline(report.best_epoch, color="gray", linestyle=":",
               label=f"best epoch = {report.best_epoch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    ax2 = ax.twinx()
    ax2.plot(epochs, report.val_accuracy, marker="^", color="#6acc65",
             label="val accuracy")
    ax2.set_ylabel("val accuracy")
    ax2.set_ylim(0.0, 1.0)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="center right", fontsize=8)
    return _save(fig, path)


def plot_channel_importance(amap: AttributionMap, path) -> Path:
    """Horizontal bars of normalized per-channel attribution."""
    n = len(amap.channel_names)
    fig = _new_fig(width=6.0, height=max(3.0, 0.22 * n))
    ax = fig.add_subplot(111)
    pos = np.arange(n)
    ax.barh(pos, amap.per_channel, color="#4878cf")
    ax.set_yticks(pos)
    ax.set_yticklabels(amap.channel_names, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("importance (sums to 1)")
    ax.set_title(f"channel importance, {amap.task}")
    return _save(fig, path)


def plot_difference_map(
    channel_names: Sequence[str], diff: np.ndarray, path,
    labels: Optional[tuple] = None,
) -> Path:
    """Signed horizontal bars of an importance difference."""
    n = len(channel_names)
    fig = _new_fig(width=6.0, height=max(3.0, 0.22 * n))
    ax = fig.add_subplot(111)
    pos = np.arange(n)
    colors = ["#d65f5f" if v < 0 else "#4878cf" for v in diff]
    ax.barh(pos, diff, color=colors)
    ax.set_yticks(pos)
    ax.set_yticklabels(channel_names, fontsize=7)
    ax.invert_yaxis()
    ax.axvline(0.0, color="black", linewidth=0.8)
    name_a, name_b = labels if labels else ("first", "second")
    ax.set_xlabel(f"importance difference ({name_a} minus {name_b})")
    ax.set_title("channel importance difference")
    return _save(fig, path)


def plot_window_trend(window_s: Sequence[float], accuracies: Sequence[float],
                      path, sds: Optional[Sequence[float]] = None) -> Path:
    """Mean accuracy as a function of decision window length."""
    fig = _new_fig()
    ax = fig.add_subplot(111)
    if sds is not None:
        ax.errorbar(window_s, accuracies, yerr=sds, marker="o", capsize=4)
    else:
        ax.plot(window_s, accuracies, marker="o")
    ax.axhline(0.5, color="gray", linewidth=0.8)
    ax.set_xlabel("window length (s)")
    ax.set_ylabel("mean accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("accuracy by decision window")
    return _save(fig, path)
