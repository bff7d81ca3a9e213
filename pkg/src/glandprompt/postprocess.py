"""From raw patch probabilities to final instance masks.

Pipeline order: stitch overlapping patch predictions by per-pixel averaging,
threshold at 0.5 (boundary value is foreground), subtract the gland/contour
overlap so touching glands separate, then clean: median filter, drop small
foreground specks, fill small background holes, and label 8-connected
components 1..K.
"""

from __future__ import annotations

import numpy as np

from glandprompt import kernels


def stitch_patches(patches, offsets, height: int, width: int) -> np.ndarray:
    """Average overlapping patch predictions onto a full-size canvas.

    Every pixel must be covered by at least one patch (the four-corner crop
    scheme guarantees this); an uncovered pixel is an error.
    """
    total = np.zeros((height, width), dtype=np.float64)
    count = np.zeros((height, width), dtype=np.int64)
    for patch, (r, c) in zip(patches, offsets):
        patch = np.asarray(patch, dtype=np.float64)
        ph, pw = patch.shape
        if r < 0 or c < 0 or r + ph > height or c + pw > width:
            raise ValueError(f"patch at offset ({r}, {c}) with shape {patch.shape} "
                             f"exceeds canvas {height}x{width}")
        total[r:r + ph, c:c + pw] += patch
        count[r:r + ph, c:c + pw] += 1
    if (count == 0).any():
        n = int((count == 0).sum())
        raise ValueError(f"{n} canvas pixels not covered by any patch")
    return total / count


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Foreground where probability >= threshold (0.5 exactly is foreground)."""
    return np.asarray(prob) >= threshold


def remove_contour_overlap(gland: np.ndarray, contour: np.ndarray) -> np.ndarray:
    """Drop gland pixels that the contour prediction also claims."""
    gland = np.asarray(gland, dtype=bool)
    contour = np.asarray(contour, dtype=bool)
    if gland.shape != contour.shape:
        raise ValueError(f"gland {gland.shape} and contour {contour.shape} shapes differ")
    return gland & ~contour


def remove_small_objects(mask: np.ndarray, min_object_px: int) -> np.ndarray:
    """Remove 8-connected foreground components smaller than min_object_px."""
    labels, n = kernels.label_components(mask, connectivity=8)
    if n == 0 or min_object_px <= 0:
        return np.asarray(mask, dtype=bool).copy()
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    keep = areas >= min_object_px
    keep[0] = False
    return keep[labels]


def fill_small_holes(mask: np.ndarray, max_hole_px: int) -> np.ndarray:
    """Fill 4-connected background holes smaller than max_hole_px.

    A hole is a background component that does not touch the image border.
    """
    mask = np.asarray(mask, dtype=bool)
    if max_hole_px <= 0:
        return mask.copy()
    labels, n = kernels.label_components(~mask, connectivity=4)
    if n == 0:
        return mask.copy()
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    touches_border = np.zeros(n + 1, dtype=bool)
    for edge in (labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]):
        touches_border[np.unique(edge)] = True
    fill = (areas < max_hole_px) & ~touches_border
    fill[0] = False
    return mask | fill[labels]


def clean(
    mask: np.ndarray,
    median_radius: int = 2,
    min_object_px: int = 500,
    max_hole_px: int = 200,
) -> np.ndarray:
    """Smooth and denoise a binary prediction, returning an instance-labeled mask."""
    if median_radius < 0 or min_object_px < 0 or max_hole_px < 0:
        raise ValueError("clean thresholds must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if median_radius > 0:
        mask = kernels.median_filter_binary(mask, median_radius)
    mask = remove_small_objects(mask, min_object_px)
    mask = fill_small_holes(mask, max_hole_px)
    labels, _ = kernels.label_components(mask, connectivity=8)
    return labels
