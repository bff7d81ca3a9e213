"""Raster kernels with selectable backend.

The numba backend is the default; set GLANDPROMPT_KERNELS=numpy to force the
pure-numpy fallback (or =numba to fail loudly if numba is unavailable). Both
backends implement identical contracts and are compared in
benchmarks/bench_kernels.py.
"""

import os

import numpy as np

BACKEND_ENV = "GLANDPROMPT_KERNELS"


def _load_backend():
    choice = os.environ.get(BACKEND_ENV, "auto").strip().lower()
    if choice in ("", "auto"):
        try:
            from glandprompt.kernels import numba_backend as impl
        except ImportError:
            from glandprompt.kernels import numpy_backend as impl
        return impl
    if choice == "numba":
        from glandprompt.kernels import numba_backend as impl
        return impl
    if choice == "numpy":
        from glandprompt.kernels import numpy_backend as impl
        return impl
    raise ValueError(f"{BACKEND_ENV} must be 'numba', 'numpy' or 'auto', got {choice!r}")


_impl = _load_backend()


def backend_name() -> str:
    """Name of the active kernel backend."""
    return _impl.BACKEND_NAME


def _as_mask(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D raster, got shape {arr.shape}")
    return np.ascontiguousarray(arr.astype(bool, copy=False))


def squared_distance_transform(mask) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest True pixel (int64).

    Raises ValueError on an all-False mask; use distance_transform for the
    inf-filled convention.
    """
    mask = _as_mask(mask)
    if not mask.any():
        raise ValueError("mask has no True pixels")
    return _impl.squared_distance_transform(mask)


def distance_transform(mask) -> np.ndarray:
    """Euclidean distance to the nearest True pixel; +inf everywhere if none."""
    mask = _as_mask(mask)
    if not mask.any():
        return np.full(mask.shape, np.inf, dtype=np.float64)
    return np.sqrt(_impl.squared_distance_transform(mask).astype(np.float64))


def binary_dilate(mask, radius: int) -> np.ndarray:
    """Dilate by a Euclidean disk of the given radius."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    return _impl.binary_dilate(_as_mask(mask), int(radius))


def binary_erode(mask, radius: int) -> np.ndarray:
    """Erode by a Euclidean disk of the given radius (clipped at borders)."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    return _impl.binary_erode(_as_mask(mask), int(radius))


def median_filter_binary(mask, radius: int) -> np.ndarray:
    """Binary median filter over a clipped square window of half-width radius."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    mask = _as_mask(mask)
    if radius == 0:
        return mask.copy()
    return _impl.median_filter_binary(mask, int(radius))


def label_components(mask, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Label connected components 1..K in raster order; returns (labels, K)."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    return _impl.label_components(_as_mask(mask), connectivity)


def hausdorff_distance(points_a, points_b) -> float:
    """Symmetric Hausdorff distance between two nonempty (N,2) pixel coordinate sets."""
    pa = np.asarray(points_a, dtype=np.int64).reshape(-1, 2)
    pb = np.asarray(points_b, dtype=np.int64).reshape(-1, 2)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("hausdorff_distance requires nonempty point sets")
    return float(np.sqrt(_impl.hausdorff_sq(pa, pb)))
