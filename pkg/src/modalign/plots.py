"""Figure rendering for the CLI report paths. Everything draws through the
Agg backend straight to files; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .training import TrainHistory

_CLASS_COLORS = {0: "tab:blue", 1: "tab:red"}
_CLASS_NAMES = {0: "CN", 1: "MCI"}


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def save_loss_curves(history: TrainHistory, path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(len(history.train_loss))
    ax.plot(epochs, history.train_loss, label="train loss")
    if any(v is not None for v in history.val_loss):
        ax.plot(epochs, history.val_loss, label="val loss")
    if history.best_epoch is not None:
        ax.axvline(history.best_epoch, color="gray", ls="--", lw=0.8,
                   label=f"best epoch {history.best_epoch}")
    if any(v is not None for v in history.val_metric):
        twin = ax.twinx()
        twin.plot(epochs, history.val_metric, color="tab:green", alpha=0.6,
                  label="val AUC")
        twin.set_ylabel("val AUC")
        twin.set_ylim(0.0, 1.05)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    return _finish(fig, path)


def save_roc(fpr: np.ndarray, tpr: np.ndarray, auc: float, path,
             title: str) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(fpr, tpr, lw=1.5, label=f"AUC = {auc:.3f}")
    ax.plot([0, 1], [0, 1], color="gray", ls=":", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower right")
    return _finish(fig, path)


def save_pca_scatter(coords: np.ndarray, labels: np.ndarray, modality: list[str],
                     explained: np.ndarray, path, title: str) -> Path:
    coords = np.asarray(coords)
    labels = np.asarray(labels)
    modality = np.asarray(modality)
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    for mod, marker in (("speech", "o"), ("mri", "^")):
        for cls in (0, 1):
            pick = (modality == mod) & (labels == cls)
            if pick.any():
                ax.scatter(coords[pick, 0], coords[pick, 1], s=22, marker=marker,
                           alpha=0.75, color=_CLASS_COLORS[cls],
                           label=f"{mod} / {_CLASS_NAMES[cls]}")
    total = explained.sum() if explained.sum() > 0 else 1.0
    ax.set_xlabel(f"PC1 ({100 * explained[0] / total:.0f}% of top-2 var)")
    ax.set_ylabel(f"PC2 ({100 * explained[1] / total:.0f}% of top-2 var)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_ablation_chart(rows: list[dict], path) -> Path:
    """Grouped bars of speech / fusion AUC per variant; failures annotated."""
    fig, ax = plt.subplots(figsize=(7.5, 4))
    names = [r["variant"] for r in rows]
    xs = np.arange(len(rows))
    speech = [r["speech_auc"] if r["status"] == "ok" else 0.0 for r in rows]
    fusion = [r["fusion_auc"] if r["status"] == "ok" else 0.0 for r in rows]
    ax.bar(xs - 0.18, speech, width=0.36, label="speech-only AUC")
    ax.bar(xs + 0.18, fusion, width=0.36, label="fusion AUC")
    for x, row in zip(xs, rows):
        if row["status"] != "ok":
            ax.text(x, 0.05, "failed", ha="center", rotation=90, color="crimson")
    ax.set_xticks(xs)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("test AUC")
    ax.set_title("ablation variants")
    ax.legend(fontsize=8)
    return _finish(fig, path)
