"""Matplotlib figures written next to the CSV/JSON artifacts."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 100,
}
# keeps PNG bytes independent of the matplotlib version string
_PNG_METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence[tuple[float, int]], path: Path, title: str = "Clusters per epsilon") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        eps = [r[0] for r in rows]
        counts = [r[1] for r in rows]
        ax.plot(eps, counts, marker="o", color="tab:blue")
        ax.set_xlabel("epsilon")
        ax.set_ylabel("clusters")
        ax.set_xlim(0, 1)
        ax.set_ylim(bottom=0)
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_accuracy(rows: Sequence[dict], path: Path) -> Path:
    """Grouped bars of accuracy per (feature set, dataset), unbalanced vs balanced.

    ``rows`` carry keys ``feature_set``, ``dataset``, ``balanced`` and ``accuracy``.
    """
    groups = sorted({(r["feature_set"], r["dataset"]) for r in rows}, key=lambda g: (g[0], _dataset_key(g[1])))
    lookup = {(r["feature_set"], r["dataset"], r["balanced"]): r["accuracy"] for r in rows}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.5, 0.7 * len(groups) + 1.5), 3.4))
        width = 0.38
        xs = range(len(groups))
        for offset, balanced, color in ((-width / 2, False, "tab:blue"), (width / 2, True, "tab:green")):
            vals = [lookup.get((g[0], g[1], balanced), 0.0) for g in groups]
            ax.bar([x + offset for x in xs], vals, width, color=color,
                   label="balanced" if balanced else "unbalanced")
        ax.set_xticks(list(xs))
        ax.set_xticklabels([f"{g[0]}\n{g[1]}" for g in groups], rotation=45, ha="right")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.05)
        ax.legend(loc="lower right")
        fig.tight_layout()
        return _save(fig, path)


def _dataset_key(name: str):
    return (0, 0.0) if name == "overall" else (1, float(name.split("_", 1)[1]))
