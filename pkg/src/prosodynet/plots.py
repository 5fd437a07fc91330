"""Report figures rendered to PNG files next to the JSON/CSV outputs."""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(fold_logs: dict, path) -> None:
    """Loss and validation accuracy per epoch, one line per fold.

    fold_logs maps fold_id -> list of (epoch, train_loss, val_accuracy).
    """
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for fold_id, rows in sorted(fold_logs.items()):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.size == 0:
            continue
        ax_loss.plot(rows[:, 0], rows[:, 1], label=fold_id, alpha=0.8)
        ax_acc.plot(rows[:, 0], rows[:, 2], label=fold_id, alpha=0.8)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    if len(fold_logs) <= 12:
        ax_acc.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_speaker_bars(per_speaker: dict, baseline: float, path) -> None:
    """Per-speaker test accuracy with the majority baseline as a dashed line."""
    speakers = sorted(per_speaker)
    values = [per_speaker[s] for s in speakers]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(speakers)), 4))
    ax.bar(range(len(speakers)), values, color="tab:blue")
    ax.axhline(baseline, color="tab:red", linestyle="--", label="majority baseline")
    ax.set_xticks(range(len(speakers)))
    ax.set_xticklabels(speakers, rotation=30, ha="right")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_confusion(confusion: np.ndarray, class_names, path) -> None:
    """Row-normalized confusion heatmap with raw counts annotated."""
    confusion = np.asarray(confusion, dtype=np.float64)
    row_sums = confusion.sum(axis=1, keepdims=True)
    norm = np.divide(confusion, np.where(row_sums > 0, row_sums, 1.0))
    n = len(class_names)
    fig, ax = plt.subplots(figsize=(1.0 * n + 2, 1.0 * n + 1.5))
    im = ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
    for i in range(n):
        for j in range(n):
            color = "white" if norm[i, j] > 0.5 else "black"
            ax.text(j, i, f"{int(confusion[i, j])}", ha="center", va="center",
                    color=color, fontsize=8)
    ax.set_xticks(range(n))
    ax.set_xticklabels(class_names, rotation=45, ha="right")
    ax.set_yticks(range(n))
    ax.set_yticklabels(class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_context_comparison(accuracies: dict, baseline: float, path) -> None:
    """Accuracy per context variant (1w / 3w / 3w-pf) as a bar chart."""
    order = [k for k in ("1w", "3w", "3w-pf") if k in accuracies]
    order += [k for k in sorted(accuracies) if k not in order]
    values = [accuracies[k] for k in order]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(range(len(order)), values, color="tab:green")
    ax.axhline(baseline, color="tab:red", linestyle="--", label="majority baseline")
    ax.set_xticks(range(len(order)))
    ax.set_xticklabels(order)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
