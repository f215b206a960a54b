"""Report figures (written as PNG files, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no software/version stamp, so repeated runs give identical bytes
PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_training_curves(epochs, path, title=None):
    x = [e["epoch"] for e in epochs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(x, [e["train_loss"] for e in epochs], marker="o", label="train")
    ax1.plot(x, [e["val_loss"] for e in epochs], marker="s", label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(x, [e["val_ua"] for e in epochs], marker="o", label="val UA")
    ax2.plot(x, [e["val_wa"] for e in epochs], marker="s", label="val WA")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(0, 1)
    ax2.legend()
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_confusion(cm, path, labels=None):
    cm = np.asarray(cm)
    C = cm.shape[0]
    labels = labels or [str(c) for c in range(C)]
    fig, ax = plt.subplots(figsize=(1.2 * C + 1.5, 1.2 * C + 1))
    ax.imshow(cm, cmap="Blues")
    for i in range(C):
        for j in range(C):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center")
    ax.set_xticks(range(C), labels)
    ax.set_yticks(range(C), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    return _save(fig, path)


def plot_ablation(rows, path):
    """Grouped UA/WA bars with std error bars, one group per config."""
    names = [r["name"] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(1.6 * len(rows) + 2, 3.8))
    ax.bar(x - 0.2, [r["ua_mean"] for r in rows], 0.4, yerr=[r["ua_std"] for r in rows], capsize=3, label="UA")
    ax.bar(x + 0.2, [r["wa_mean"] for r in rows], 0.4, yerr=[r["wa_std"] for r in rows], capsize=3, label="WA")
    ax.set_xticks(x, names, rotation=20, ha="right")
    lo = min(min(r["ua_mean"], r["wa_mean"]) for r in rows)
    ax.set_ylim(max(0.0, lo - 0.15), 1.0)
    ax.set_ylabel("test accuracy")
    ax.legend()
    return _save(fig, path)
