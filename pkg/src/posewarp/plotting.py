"""Report figures, rendered to files with the non-interactive backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_curve(history, path):
    """Reconstruction and edge loss per epoch, log scale, with the learning rate on a twin axis."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(epochs, [h["rec"] for h in history], label="rec")
    ax.semilogy(epochs, [h["edge"] for h in history], label="edge")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    lr_ax = ax.twinx()
    lr_ax.plot(epochs, [h["lr"] for h in history], color="0.6", linestyle="--", label="lr")
    lr_ax.set_ylabel("learning rate")
    lines = ax.get_lines() + lr_ax.get_lines()
    ax.legend(lines, [line.get_label() for line in lines], loc="upper right")
    return _save(fig, path)


def plot_eval(rows, path):
    """Per-pair PMD, CD (x1e3) and EMD (x1e2) as grouped bars."""
    ids = [r.pair_id for r in rows]
    values = np.array([[r.pmd * 1e3, r.cd * 1e3, r.emd * 1e2] for r in rows])
    x = np.arange(len(ids))
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(ids) + 2), 4))
    for k, label in enumerate(("PMD x1e3", "CD x1e3", "EMD x1e2")):
        ax.bar(x + (k - 1) * 0.27, values[:, k], width=0.27, label=label)
    ax.set_xticks(x, ids, rotation=45, ha="right")
    ax.legend()
    return _save(fig, path)


def plot_sinkhorn(plan, col_errors, path):
    """Transport plan heatmap next to the column-marginal error per iteration."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    im = left.imshow(plan * plan.shape[0], aspect="auto", cmap="viridis")
    left.set_xlabel("pose vertex")
    left.set_ylabel("identity vertex")
    fig.colorbar(im, ax=left, label="row-normalized mass")
    if col_errors:
        right.semilogy(np.arange(1, len(col_errors) + 1), np.maximum(col_errors, 1e-300))
    right.set_xlabel("iteration")
    right.set_ylabel("column marginal L1 error")
    return _save(fig, path)
