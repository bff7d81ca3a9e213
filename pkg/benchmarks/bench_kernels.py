#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy twins.

Times each raster kernel on realistic inputs (400x400 masks with blob-like
foreground, boundary point sets in the hundreds) and prints one row per
kernel and backend. The first numba call includes JIT compilation; a warmup
pass is run first so the table reports steady-state times.
"""

import time

import numpy as np

from glandprompt.kernels import numba_backend, numpy_backend

SIZE = 400
REPEATS = 5


def make_blob_mask(rng, size=SIZE, n_blobs=6, radius=40):
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(n_blobs):
        r0, c0 = rng.integers(radius, size - radius, 2)
        rad = rng.integers(radius // 2, radius)
        mask |= (rr - r0) ** 2 + (cc - c0) ** 2 <= rad * rad
    return mask


def timeit(fn, *args, repeats=REPEATS):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    mask = make_blob_mask(rng)
    noisy = mask ^ (rng.random(mask.shape) < 0.02)
    pts_a = np.argwhere(mask & ~np.roll(mask, 1, axis=0))[:600]
    pts_b = np.argwhere(noisy & ~np.roll(noisy, 1, axis=1))[:600]

    cases = [
        ("squared_distance_transform", lambda b: b.squared_distance_transform(mask)),
        ("binary_dilate(r=2)", lambda b: b.binary_dilate(mask, 2)),
        ("binary_erode(r=2)", lambda b: b.binary_erode(mask, 2)),
        ("median_filter(r=2)", lambda b: b.median_filter_binary(noisy, 2)),
        ("label_components(8)", lambda b: b.label_components(noisy, 8)),
        ("hausdorff_sq", lambda b: b.hausdorff_sq(pts_a, pts_b)),
    ]

    # warmup compiles the numba kernels so the table shows steady-state times
    for _, fn in cases:
        fn(numba_backend)

    print(f"{SIZE}x{SIZE} rasters, best of {REPEATS} runs, times in ms\n")
    print(f"{'kernel':<30}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, fn in cases:
        t_np = timeit(fn, numpy_backend) * 1e3
        t_nb = timeit(fn, numba_backend) * 1e3
        print(f"{name:<30}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>9.1f}x")

    for backend in (numpy_backend, numba_backend):
        got = backend.label_components(noisy, 8)[1]
        print(f"\n{backend.BACKEND_NAME}: {got} components in the noisy mask", end="")
    print()


if __name__ == "__main__":
    main()
