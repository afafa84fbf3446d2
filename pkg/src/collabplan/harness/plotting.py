"""Figure and plot-data emission: every figure is written as a CSV and a PNG."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_curve(curve: Sequence[float], path: str | Path, *, title: str = "Mean total reward", window: int = 10) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        xs = range(len(curve))
        ax.plot(xs, curve, lw=0.8, alpha=0.5, label="per step")
        if len(curve) >= window:
            smooth = [sum(curve[i - window + 1:i + 1]) / window for i in range(window - 1, len(curve))]
            ax.plot(range(window - 1, len(curve)), smooth, lw=1.6, label=f"{window}-step mean")
        ax.set_xlabel("step")
        ax.set_ylabel("reward")
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_bars(labels: Sequence[str], values: Sequence[float], path: str | Path, *, ylabel: str, title: str = "") -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(labels) + 1.5), 3.6))
        ax.bar(range(len(values)), values, color="#4c72b0")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        for i, v in enumerate(values):
            ax.annotate(f"{v:.3f}", (i, v), ha="center", va="bottom", fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def plot_hist(values: Sequence[float], path: str | Path, *, xlabel: str, bins: int = 20, title: str = "") -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.hist(values, bins=bins, color="#55a868")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("items")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
