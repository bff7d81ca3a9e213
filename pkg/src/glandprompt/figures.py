"""Static figures: heat-map overlays, overlap-removal panels, prediction grids."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _mask_edges(labels: np.ndarray) -> np.ndarray:
    mask = labels > 0
    pad = np.pad(mask, 1, constant_values=False)
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    return mask & ~interior


def heatmap_panel(entries: list[tuple[np.ndarray, np.ndarray, str]], path) -> Path:
    """Rows of (image, heat map in [0,1], title): image and overlay side by side."""
    n = len(entries)
    fig, axes = plt.subplots(n, 2, figsize=(6, 3 * n), squeeze=False)
    for row, (image, heat, title) in enumerate(entries):
        axes[row][0].imshow(image)
        axes[row][0].set_title(title, fontsize=8)
        axes[row][1].imshow(image)
        axes[row][1].imshow(heat, cmap="jet", alpha=0.45, vmin=0, vmax=1)
        axes[row][1].set_title("heat map", fontsize=8)
        for ax in axes[row]:
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def overlap_removal_panel(gland: np.ndarray, contour: np.ndarray,
                          removed: np.ndarray, path) -> Path:
    """Gland / contour / colored overlap / result-after-removal strip."""
    overlap = gland & contour
    colored = np.zeros(gland.shape + (3,), dtype=np.float32)
    colored[gland] = (0.2, 0.4, 1.0)
    colored[contour] = (0.2, 0.9, 0.3)
    colored[overlap] = (1.0, 0.2, 0.2)
    panels = [
        (gland, "gland prediction"),
        (contour, "contour prediction"),
        (colored, "overlap (red)"),
        (removed, "after removal"),
    ]
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
    for ax, (img, title) in zip(axes, panels):
        if img.ndim == 2:
            ax.imshow(img, cmap="gray")
        else:
            ax.imshow(img)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def prediction_grid(entries: list[tuple[np.ndarray, np.ndarray, np.ndarray, str]], path) -> Path:
    """Columns per image: original / ground truth boundaries / predicted boundaries."""
    n = len(entries)
    fig, axes = plt.subplots(3, n, figsize=(2.6 * n, 8), squeeze=False)
    for col, (image, gt, pred, title) in enumerate(entries):
        axes[0][col].imshow(image)
        axes[0][col].set_title(title, fontsize=8)
        gt_vis = image.copy()
        gt_vis[_mask_edges(gt)] = (0, 255, 0)
        axes[1][col].imshow(gt_vis)
        pred_vis = image.copy()
        pred_vis[_mask_edges(pred)] = (255, 40, 40)
        axes[2][col].imshow(pred_vis)
        for row in range(3):
            axes[row][col].axis("off")
    axes[0][0].set_ylabel("image")
    axes[1][0].set_ylabel("ground truth")
    axes[2][0].set_ylabel("prediction")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
