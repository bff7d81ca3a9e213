"""Vectorized numpy implementations of the hot raster kernels.

Fallback path for environments without numba; selected with
GLANDPROMPT_KERNELS=numpy. Same contracts as numba_backend.
"""

import numpy as np

from glandprompt.kernels._common import disk_offsets, relabel_raster_order

BACKEND_NAME = "numpy"

# Rows per chunk in the O(H*W^2) column sweep; bounds temporary memory.
_EDT_CHUNK_ELEMS = 4_000_000


def squared_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest True pixel.

    mask must contain at least one True pixel.
    """
    H, W = mask.shape
    big = H + W  # farther than any in-image axis distance
    g = np.full((H, W), big, dtype=np.int64)
    g[mask] = 0
    for r in range(1, H):
        np.minimum(g[r], g[r - 1] + 1, out=g[r])
    for r in range(H - 2, -1, -1):
        np.minimum(g[r], g[r + 1] + 1, out=g[r])
    g2 = g * g

    cols = np.arange(W, dtype=np.int64)
    dc2 = (cols[:, None] - cols[None, :]) ** 2
    out = np.empty((H, W), dtype=np.int64)
    chunk = max(1, _EDT_CHUNK_ELEMS // (W * W))
    for r0 in range(0, H, chunk):
        r1 = min(H, r0 + chunk)
        out[r0:r1] = (g2[r0:r1, None, :] + dc2[None, :, :]).min(axis=2)
    return out


def _shift_slices(H, W, dr, dc):
    a0, a1 = max(0, -dr), min(H, H - dr)
    b0, b1 = max(0, -dc), min(W, W - dc)
    return (slice(a0, a1), slice(b0, b1)), (slice(a0 + dr, a1 + dr), slice(b0 + dc, b1 + dc))


def binary_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Disk dilation; pixels outside the image contribute nothing."""
    H, W = mask.shape
    out = np.zeros_like(mask)
    for dr, dc in disk_offsets(radius):
        dst, src = _shift_slices(H, W, int(dr), int(dc))
        np.logical_or(out[dst], mask[src], out=out[dst])
    return out


def binary_erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Disk erosion; out-of-bounds neighbors are ignored (clipped window)."""
    H, W = mask.shape
    out = mask.copy()
    for dr, dc in disk_offsets(radius):
        if dr == 0 and dc == 0:
            continue
        dst, src = _shift_slices(H, W, int(dr), int(dc))
        np.logical_and(out[dst], mask[src], out=out[dst])
    return out


def median_filter_binary(mask: np.ndarray, radius: int) -> np.ndarray:
    """Median over a clipped (2r+1)x(2r+1) window; ties resolve to foreground."""
    H, W = mask.shape
    ii = np.zeros((H + 1, W + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask, axis=0, dtype=np.int64), axis=1, out=ii[1:, 1:])
    r0 = np.clip(np.arange(H) - radius, 0, H)
    r1 = np.clip(np.arange(H) + radius + 1, 0, H)
    c0 = np.clip(np.arange(W) - radius, 0, W)
    c1 = np.clip(np.arange(W) + radius + 1, 0, W)
    cnt = ii[r1][:, c1] - ii[r0][:, c1] - ii[r1][:, c0] + ii[r0][:, c0]
    area = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return cnt * 2 >= area


def label_components(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Connected-component labeling via row runs + union-find.

    Returns (labels, count) with labels numbered 1..K in raster order.
    """
    H, W = mask.shape
    labels = np.zeros((H, W), dtype=np.int32)
    if not mask.any():
        return labels, 0

    padded = np.zeros((H, W + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    diff = np.diff(padded, axis=1)
    run_rows, starts = np.nonzero(diff == 1)
    _, ends = np.nonzero(diff == -1)  # same raster order as starts

    n_runs = run_rows.size
    parent = np.arange(n_runs, dtype=np.int64)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    # Runs are raster-ordered; walk adjacent row pairs with two pointers.
    slack = 1 if connectivity == 8 else 0
    row_first = np.searchsorted(run_rows, np.arange(H + 1))
    for r in range(H - 1):
        i, i_end = int(row_first[r]), int(row_first[r + 1])
        j, j_end = int(row_first[r + 1]), int(row_first[r + 2])
        while i < i_end and j < j_end:
            if starts[i] <= ends[j] - 1 + slack and starts[j] <= ends[i] - 1 + slack:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
            if ends[i] < ends[j]:
                i += 1
            else:
                j += 1

    run_label = np.array([find(i) for i in range(n_runs)], dtype=np.int64) + 1
    for i in range(n_runs):
        labels[run_rows[i], starts[i]:ends[i]] = run_label[i]
    return relabel_raster_order(labels)


def hausdorff_sq(points_a: np.ndarray, points_b: np.ndarray) -> int:
    """Squared symmetric Hausdorff distance between two nonempty (N,2) point sets."""
    return max(_directed_sq(points_a, points_b), _directed_sq(points_b, points_a))


def _directed_sq(p: np.ndarray, q: np.ndarray) -> int:
    p = p.astype(np.int64, copy=False)
    q = q.astype(np.int64, copy=False)
    best = 0
    chunk = max(1, 2_000_000 // max(1, q.shape[0]))
    for i0 in range(0, p.shape[0], chunk):
        seg = p[i0:i0 + chunk]
        d = (seg[:, 0, None] - q[None, :, 0]) ** 2 + (seg[:, 1, None] - q[None, :, 1]) ** 2
        best = max(best, int(d.min(axis=1).max()))
    return best
