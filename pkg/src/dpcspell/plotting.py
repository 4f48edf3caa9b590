"""Figures for the report path: loss curves and per-type scores, written as PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errorgen import DISPLAY_NAMES, ErrorType  # noqa: E402

_STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}
# PNG metadata carries the matplotlib version by default; drop it so reruns are byte-identical
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_losses(logs, path, title="Training loss"):
    """``logs`` maps a label (usually the stage name) to a TrainingLog."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        for label, lg in logs.items():
            epochs = [r.epoch for r in lg.records]
            ax.plot(epochs, [r.train_loss for r in lg.records], label=f"{label} train")
            val = [r.val_loss for r in lg.records]
            if any(v == v for v in val):
                ax.plot(epochs, val, linestyle="--", label=f"{label} val")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax.set_yscale("log")
        ax.set_title(title)
        if logs:
            ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def plot_type_scores(report, path, column="EM", title=None):
    """Horizontal bar per error type for one metric column of an EvalReport."""
    idx = {"EM": 1, "MA": 2, "P": 3, "R": 4, "F1": 5, "F0.5": 6}[column]
    kinds = [k for k in ErrorType if k in report.rows]
    vals = [report.rows[k].values()[idx] for k in kinds]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 0.3 * len(kinds) + 1.2))
        ypos = range(len(kinds))
        ax.barh(ypos, vals, color="#4c72b0")
        ax.set_yticks(list(ypos), [DISPLAY_NAMES[k] for k in kinds], fontsize=7)
        ax.invert_yaxis()
        ax.set_xlim(0, 1)
        ax.axvline(report.weighted.values()[idx], color="k", linewidth=0.8, linestyle=":")
        ax.set_xlabel(column)
        ax.set_title(title or f"{column} by error type")
        fig.tight_layout()
        return _save(fig, path)
