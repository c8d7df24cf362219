"""Report figures. PNGs are written without timestamps or version metadata so reruns are byte-identical."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "svg.hashsalt": "datforge",
    "path.simplify": False,
}
_COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def grouped_bars(path, categories, series: dict, ylabel: str, title: str) -> Path:
    """One bar cluster per category, one bar per series entry (``name -> values``)."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(categories) + 2), 3.2))
        n = max(1, len(series))
        width = 0.8 / n
        for i, (name, values) in enumerate(series.items()):
            xs = [j + (i - (n - 1) / 2) * width for j in range(len(categories))]
            ax.bar(xs, values, width, label=name, color=_COLORS[i % len(_COLORS)])
        ax.set_xticks(range(len(categories)))
        ax.set_xticklabels([str(c) for c in categories])
        ax.axhline(0.0, color="black", linewidth=0.6)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def line_series(path, xs, series: dict, xlabel: str, ylabel: str, title: str) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        for i, (name, ys) in enumerate(series.items()):
            ax.plot(xs, ys, marker="o", label=name, color=_COLORS[i % len(_COLORS)])
        ax.set_xticks(list(xs))
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)
