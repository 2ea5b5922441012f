"""Figure rendering for run reports and evaluations.

All figures are written to files next to the delimited output; nothing is
shown interactively.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

VARIANT_ORDER = ("S", "S_plus", "SR_plus", "C_SR_plus")


def save_miou_figure(results: dict, path: Path | str) -> Path:
    """Bar chart of median test mIoU per variant with per-seed points."""
    variants = [v for v in VARIANT_ORDER if v in results] or sorted(results)
    medians, seed_points = [], []
    for variant in variants:
        values = [r["miou"] for r in results[variant].values() if "miou" in r]
        medians.append(float(np.median(values)) if values else np.nan)
        seed_points.append(values)

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    xs = np.arange(len(variants))
    ax.bar(xs, medians, width=0.6, color="#7593af", label="median")
    for x, values in zip(xs, seed_points):
        ax.scatter([x] * len(values), values, color="#30353b", zorder=3, s=18, label=None)
    ax.set_xticks(xs)
    ax.set_xticklabels(variants)
    ax.set_ylabel("test mIoU")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("Ablation: median test mIoU by variant")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_history_figure(results: dict, path: Path | str) -> Path:
    """Training-loss components per variant (one panel each, seeds overlaid)."""
    variants = [v for v in VARIANT_ORDER if v in results] or sorted(results)
    fig, axes = plt.subplots(1, max(1, len(variants)), figsize=(3.2 * max(1, len(variants)), 3.0),
                             sharey=True, squeeze=False)
    for ax, variant in zip(axes[0], variants):
        for seed, run in sorted(results[variant].items()):
            history = run.get("history") or []
            if not history:
                continue
            epochs = [h["epoch"] for h in history]
            ax.plot(epochs, [h["seg_loss"] for h in history], label=f"seed {seed} pixel")
            if any(h["weak_samples"] for h in history):
                ax.plot(epochs, [h["reg_loss"] for h in history], linestyle="--",
                        label=f"seed {seed} regression")
        ax.set_title(variant)
        ax.set_xlabel("epoch")
    axes[0][0].set_ylabel("loss")
    handles, labels = axes[0][-1].get_legend_handles_labels()
    if handles:
        axes[0][-1].legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_per_image_iou_figure(per_image: list[tuple[str, float]], path: Path | str) -> Path:
    names = [n for n, _ in per_image]
    values = [v for _, v in per_image]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(names)), 3.4))
    ax.bar(np.arange(len(names)), values, color="#7593af")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=75, fontsize=7)
    ax.set_ylabel("IoU")
    ax.set_ylim(0.0, 1.0)
    ax.axhline(float(np.mean(values)), color="#30353b", linestyle=":", label="mean")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
