"""Figures written next to the CLI's text outputs (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def training_curves(history, path) -> Path:
    """Loss and validation NDCG / R@1 per epoch."""
    path = Path(path)
    epochs = [h.epoch for h in history]
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3), layout="constrained")
        for ax in (ax1, ax2):
            ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax1.plot(epochs[1:], [h.train_loss for h in history[1:]], "o-", label="train")
        ax1.plot(epochs, [h.probe_loss for h in history], "s--", label="probe")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("loss")
        ax1.legend(frameon=False)
        ax2.plot(epochs, [h.report.ndcg for h in history], "o-", label="NDCG")
        ax2.plot(epochs, [h.report.r1 for h in history], "s--", label="R@1")
        ax2.set_xlabel("epoch")
        ax2.set_ylim(0, 100)
        ax2.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return path


def attention_heatmaps(maps: dict, path, title: str = "") -> Path:
    """One panel per (stack, target, source) head-averaged map."""
    path = Path(path)
    keys = sorted(maps)
    ncols = min(3, len(keys))
    nrows = -(-len(keys) // ncols)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(3.6 * ncols, 3.0 * nrows), squeeze=False,
                                 layout="constrained")
        for ax, key in zip(axes.flat, keys):
            im = ax.imshow(np.asarray(maps[key]), aspect="auto", cmap="viridis", vmin=0.0)
            ax.set_title("stack %d: %s <- %s" % key)
            ax.set_xlabel("source entity")
            ax.set_ylabel("target entity")
            ax.xaxis.set_major_locator(MaxNLocator(integer=True))
            ax.yaxis.set_major_locator(MaxNLocator(integer=True))
            fig.colorbar(im, ax=ax, fraction=0.046)
        for ax in list(axes.flat)[len(keys):]:
            ax.axis("off")
        if title:
            fig.suptitle(title)
        fig.savefig(path)
        plt.close(fig)
    return path


def bench_plot(rows, path) -> Path:
    path = Path(path)
    n = [r.n for r in rows]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.loglog(n, [r.proposed_ms for r in rows], "o-", label="proposed layer")
        ax.loglog(n, [r.naive_ms for r in rows], "s--", label="naive U^2 blocks")
        ax.set_xlabel("entities per utility")
        ax.set_ylabel("median forward time (ms)")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return path


def param_count_plot(rows, path) -> Path:
    path = Path(path)
    labels = [r["config"] for r in rows]
    x = np.arange(len(rows))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.4 * len(rows)), 3))
        ax.bar(x - 0.2, [r["proposed_total"] for r in rows], 0.4, label="proposed")
        ax.bar(x + 0.2, [r["naive_total"] for r in rows], 0.4, label="naive")
        ax.set_yscale("log")
        ax.set_xticks(x, labels)
        ax.set_ylabel("parameters per layer")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return path
