"""Numba-jitted implementations of the hot raster kernels.

Default backend; the pure-numpy twin lives in numpy_backend. Kernels are
cached to disk so the JIT cost is paid once per machine.
"""

import numpy as np
from numba import njit

from glandprompt.kernels._common import disk_offsets, relabel_raster_order

BACKEND_NAME = "numba"

_BIG = 1e15  # larger than any squared in-image distance


@njit(cache=True)
def _edt_1d(f, d, v, z, n):
    # Lower-envelope-of-parabolas pass (Felzenszwalb & Huttenlocher).
    k = 0
    v[0] = 0
    z[0] = -_BIG
    z[1] = _BIG
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _BIG
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) * (q - v[k]) + f[v[k]]


@njit(cache=True)
def _edt_2d(mask):
    H, W = mask.shape
    g = np.empty((H, W), np.float64)
    for c in range(W):
        dist = _BIG
        for r in range(H):
            if mask[r, c]:
                dist = 0.0
            else:
                dist += 1.0
            g[r, c] = dist
        dist = _BIG
        for r in range(H - 1, -1, -1):
            if mask[r, c]:
                dist = 0.0
            else:
                dist += 1.0
            if dist < g[r, c]:
                g[r, c] = dist
    out = np.empty((H, W), np.int64)
    f = np.empty(W, np.float64)
    d = np.empty(W, np.float64)
    v = np.empty(W, np.int64)
    z = np.empty(W + 1, np.float64)
    for r in range(H):
        for c in range(W):
            val = g[r, c]
            f[c] = val * val if val < _BIG else _BIG
        _edt_1d(f, d, v, z, W)
        for c in range(W):
            out[r, c] = np.int64(round(d[c]))
    return out


def squared_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest True pixel."""
    return _edt_2d(mask)


@njit(cache=True)
def _apply_disk(mask, offsets, dilate):
    H, W = mask.shape
    out = np.empty((H, W), np.bool_)
    n = offsets.shape[0]
    for r in range(H):
        for c in range(W):
            acc = not dilate
            for k in range(n):
                rr = r + offsets[k, 0]
                cc = c + offsets[k, 1]
                if rr < 0 or rr >= H or cc < 0 or cc >= W:
                    continue
                if dilate:
                    if mask[rr, cc]:
                        acc = True
                        break
                else:
                    if not mask[rr, cc]:
                        acc = False
                        break
            out[r, c] = acc
    return out


def binary_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Disk dilation; pixels outside the image contribute nothing."""
    return _apply_disk(mask, disk_offsets(radius), True)


def binary_erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Disk erosion; out-of-bounds neighbors are ignored (clipped window)."""
    return _apply_disk(mask, disk_offsets(radius), False)


@njit(cache=True)
def _median_binary(mask, radius):
    H, W = mask.shape
    out = np.empty((H, W), np.bool_)
    for r in range(H):
        r0 = max(0, r - radius)
        r1 = min(H, r + radius + 1)
        for c in range(W):
            c0 = max(0, c - radius)
            c1 = min(W, c + radius + 1)
            cnt = 0
            for rr in range(r0, r1):
                for cc in range(c0, c1):
                    if mask[rr, cc]:
                        cnt += 1
            out[r, c] = cnt * 2 >= (r1 - r0) * (c1 - c0)
    return out


def median_filter_binary(mask: np.ndarray, radius: int) -> np.ndarray:
    """Median over a clipped (2r+1)x(2r+1) window; ties resolve to foreground."""
    return _median_binary(mask, radius)


@njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True)
def _label_two_pass(mask, eight):
    H, W = mask.shape
    labels = np.zeros((H, W), np.int32)
    parent = np.arange(H * W // 2 + 2, dtype=np.int32)
    nxt = 1
    for r in range(H):
        for c in range(W):
            if not mask[r, c]:
                continue
            best = 0
            # scanned neighbors: W, N, and for 8-connectivity NW/NE
            if c > 0 and labels[r, c - 1] > 0:
                best = _find(parent, labels[r, c - 1])
            if r > 0:
                if labels[r - 1, c] > 0:
                    q = _find(parent, labels[r - 1, c])
                    best = q if best == 0 else min(best, q)
                if eight:
                    if c > 0 and labels[r - 1, c - 1] > 0:
                        q = _find(parent, labels[r - 1, c - 1])
                        best = q if best == 0 else min(best, q)
                    if c < W - 1 and labels[r - 1, c + 1] > 0:
                        q = _find(parent, labels[r - 1, c + 1])
                        best = q if best == 0 else min(best, q)
            if best == 0:
                labels[r, c] = nxt
                nxt += 1
            else:
                labels[r, c] = best
                if c > 0 and labels[r, c - 1] > 0:
                    parent[_find(parent, labels[r, c - 1])] = best
                if r > 0:
                    if labels[r - 1, c] > 0:
                        parent[_find(parent, labels[r - 1, c])] = best
                    if eight:
                        if c > 0 and labels[r - 1, c - 1] > 0:
                            parent[_find(parent, labels[r - 1, c - 1])] = best
                        if c < W - 1 and labels[r - 1, c + 1] > 0:
                            parent[_find(parent, labels[r - 1, c + 1])] = best
    for r in range(H):
        for c in range(W):
            if labels[r, c] > 0:
                labels[r, c] = _find(parent, labels[r, c])
    return labels


def label_components(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Two-pass union-find labeling; labels numbered 1..K in raster order."""
    return relabel_raster_order(_label_two_pass(mask, connectivity == 8))


@njit(cache=True)
def _directed_sq(p, q):
    best = np.int64(0)
    for i in range(p.shape[0]):
        dr = p[i, 0] - q[0, 0]
        dc = p[i, 1] - q[0, 1]
        lo = dr * dr + dc * dc
        for j in range(1, q.shape[0]):
            dr = p[i, 0] - q[j, 0]
            dc = p[i, 1] - q[j, 1]
            d = dr * dr + dc * dc
            if d < lo:
                lo = d
                if lo == 0:
                    break
        if lo > best:
            best = lo
    return best


def hausdorff_sq(points_a: np.ndarray, points_b: np.ndarray) -> int:
    """Squared symmetric Hausdorff distance between two nonempty (N,2) point sets."""
    pa = np.ascontiguousarray(points_a, dtype=np.int64)
    pb = np.ascontiguousarray(points_b, dtype=np.int64)
    return int(max(_directed_sq(pa, pb), _directed_sq(pb, pa)))
