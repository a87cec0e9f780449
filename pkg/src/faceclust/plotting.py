"""Figures written next to the CSV reports.

Uses the object-oriented matplotlib API with the Agg canvas so nothing
touches global pyplot state or needs a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"]


def _figure(width: float = 4.5, height: float = 3.4):
    fig = Figure(figsize=(width, height), dpi=120)
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    return path


def plot_roc(curves: Mapping[str, Sequence[tuple[float, float, float]]], path) -> Path:
    fig, ax = _figure()
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
    for color, (name, points) in zip(PALETTE, curves.items()):
        fpr = [p[1] for p in points]
        tpr = [p[2] for p in points]
        ax.plot(fpr, tpr, color=color, lw=1.4, label=name)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.legend(loc="lower right", frameon=False, fontsize=8)
    return _save(fig, path)


def plot_sweep(rows, path) -> Path:
    fig, ax = _figure()
    taus = [r.tau for r in rows]
    for color, (label, key) in zip(PALETTE, (("pairwise F", "pairwise_f"), ("BCubed F", "bcubed_f"),
                                             ("NMI", "nmi"))):
        ax.plot(taus, [getattr(r, key) for r in rows], marker="o", ms=3, color=color, label=label)
    ax.set_xlabel("threshold")
    ax.set_ylabel("score")
    ax.legend(frameon=False, fontsize=8)
    twin = ax.twinx()
    twin.plot(taus, [r.clusters for r in rows], color="0.5", lw=0.8, ls=":")
    twin.set_ylabel("clusters", color="0.5")
    return _save(fig, path)


def plot_loss(losses: Sequence[float], lrs: Sequence[float], path) -> Path:
    fig, ax = _figure()
    epochs = np.arange(len(losses))
    ax.plot(epochs, losses, color=PALETTE[0])
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    twin = ax.twinx()
    twin.plot(epochs, lrs, color="0.5", lw=0.8, ls=":")
    twin.set_ylabel("learning rate", color="0.5")
    return _save(fig, path)


def plot_ablation(table: Sequence[Mapping[str, float]], path) -> Path:
    fig, ax = _figure(5.0, 3.4)
    names = [row["variant"] for row in table]
    keys = ("pairwise_f", "bcubed_f", "nmi")
    x = np.arange(len(names))
    width = 0.26
    for i, key in enumerate(keys):
        ax.bar(x + (i - 1) * width, [row[key] for row in table], width, color=PALETTE[i], label=key)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1)
    ax.legend(frameon=False, fontsize=8, ncol=3, loc="lower center", bbox_to_anchor=(0.5, 1.0))
    return _save(fig, path)
