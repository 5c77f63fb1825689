"""Figure rendering for run artifacts.

Every delimited output the pipelines write has a matching PNG rendered next
to it: loss curves for training reports, bar charts for attention weights
and evaluation metrics, and a 2-D projection of the embeddings when labels
are available.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (6.4, 4.0)
DPI = 120


def save_loss_curve(losses, path, best_epoch: int | None = None) -> None:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    epochs = np.arange(1, len(losses) + 1)
    ax.plot(epochs, losses, lw=1.2)
    if best_epoch:
        ax.axvline(best_epoch, color="tab:red", ls="--", lw=0.8, label=f"best epoch {best_epoch}")
        ax.legend(frameon=False)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_attention_bars(names, beta, path) -> None:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    pos = np.arange(len(names))
    ax.bar(pos, np.asarray(beta, dtype=float), color="tab:blue")
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("attention weight")
    ax.set_ylim(0, 1)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_metric_bars(rows, path) -> None:
    """Grouped bars for MetricRow lists, one bar per (metric, scope)."""
    labels = [f"{r.metric}\n{r.scope}" for r in rows]
    values = [r.value for r in rows]
    errors = [r.std for r in rows]
    fig, ax = plt.subplots(figsize=(max(FIGSIZE[0], 1.1 * len(rows)), FIGSIZE[1]))
    pos = np.arange(len(rows))
    ax.bar(pos, values, yerr=errors, capsize=3, color="tab:green")
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("score")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_embedding_scatter(z, labels, path) -> None:
    """2-D PCA projection of the embeddings, colored by label when given."""
    z = np.asarray(z, dtype=float)
    centered = z - z.mean(axis=0)
    # Two leading principal directions via SVD; cheaper than a PCA dependency.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:2].T
    fig, ax = plt.subplots(figsize=FIGSIZE)
    if labels is None:
        ax.scatter(proj[:, 0], proj[:, 1], s=12, alpha=0.8)
    else:
        labels = np.asarray(labels)
        for c in np.unique(labels):
            sel = labels == c
            ax.scatter(proj[sel, 0], proj[sel, 1], s=12, alpha=0.8, label=str(c))
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("pc 1")
    ax.set_ylabel("pc 2")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
