"""Figures written next to the delimited reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .metrics import SCORE_NAMES  # noqa: E402


def plot_growth(records, path, title=None):
    """Loss of every growth step; rejected blocks in grey, layer boundaries dashed."""
    steps = [r for r in records if r["kind"] == "step"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for r in steps:
        losses = [v for v in r["candidate_losses"] if v is not None]
        ax.scatter([r["step"]] * len(losses), losses, s=4, color="0.8", zorder=1)
    kept = [r for r in steps if r["decision"] == "accept"]
    ax.plot([r["step"] for r in kept], [r["L_cur"] for r in kept], "o-", color="C0",
            label="accepted block", zorder=3)
    rejected = [r for r in steps if r["decision"] == "reject"]
    if rejected:
        ax.plot([r["step"] for r in rejected], [r["L_cur"] for r in rejected], "x",
                color="C3", label="rejected block", zorder=3)
    layer = None
    for r in steps:
        if layer is not None and r["layer"] != layer:
            ax.axvline(r["step"] - 0.5, color="k", ls="--", lw=0.8)
        layer = r["layer"]
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("growth step")
    ax.set_ylabel("weighted MSE (train)")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_fold_scores(rows, path):
    """Grouped bars of accuracy / precision / recall / F1 per fold."""
    names = [name for name, _ in rows]
    values = np.array([s.as_tuple() for _, s in rows])
    x = np.arange(len(names))
    width = 0.8 / len(SCORE_NAMES)
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(names) + 2), 3.5))
    for j, metric in enumerate(SCORE_NAMES):
        ax.bar(x + (j - 1.5) * width, values[:, j], width, label=metric)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 115)
    ax.set_ylabel("%")
    ax.legend(frameon=False, fontsize=8, ncol=4, loc="upper center")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
