"""Shared helpers used by both kernel backends."""

import numpy as np


def disk_offsets(radius: int) -> np.ndarray:
    """Offsets (dr, dc) of a Euclidean disk structuring element, center included."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    span = np.arange(-radius, radius + 1, dtype=np.int64)
    dr, dc = np.meshgrid(span, span, indexing="ij")
    keep = dr * dr + dc * dc <= radius * radius
    return np.stack([dr[keep], dc[keep]], axis=1)


def relabel_raster_order(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Renumber positive labels to 1..K by order of first appearance in raster scan."""
    flat = labels.ravel()
    values, first = np.unique(flat, return_index=True)
    keep = values > 0
    values, first = values[keep], first[keep]
    order = np.argsort(first, kind="stable")
    lut = np.zeros(int(values.max()) + 1 if values.size else 1, dtype=np.int32)
    lut[values[order]] = np.arange(1, order.size + 1, dtype=np.int32)
    return lut[flat].reshape(labels.shape), int(order.size)
