"""Training-curve figures rendered to PNG next to ``metrics.jsonl``."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .train import RunMetrics  # noqa: E402


def plot_training_curves(metrics: RunMetrics, path: str) -> str:
    epochs = metrics.column("epoch")
    fig, (ax_loss, ax_acc, ax_lr) = plt.subplots(1, 3, figsize=(12, 3.5))
    ax_loss.plot(epochs, metrics.column("train_loss"), marker=".")
    ax_loss.set(title="train loss", xlabel="epoch")
    ax_acc.plot(epochs, metrics.column("train_accuracy"), marker=".", label="train")
    top1 = metrics.column("eval_top1")
    if any(v is not None for v in top1):
        ax_acc.plot(epochs, top1, marker=".", label="eval top-1")
    ax_acc.set(title="accuracy", xlabel="epoch", ylim=(0, 1.02))
    ax_acc.legend(loc="lower right")
    ax_lr.plot(epochs, metrics.column("learning_rate"), marker=".")
    ax_lr.set(title="learning rate (end of epoch)", xlabel="epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
