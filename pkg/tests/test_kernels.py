"""Kernel backends: numpy/numba equivalence and brute-force oracle checks."""

import numpy as np
import pytest

from glandprompt import kernels
from glandprompt.kernels import numba_backend, numpy_backend

from oracles import brute_dilate, brute_erode, brute_median, brute_sq_edt

BACKENDS = [numpy_backend, numba_backend]


def random_mask(rng, lo=3, hi=24, p=0.35):
    h, w = rng.integers(lo, hi, 2)
    mask = rng.random((h, w)) < p
    if not mask.any():
        mask[rng.integers(h), rng.integers(w)] = True
    return mask


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.BACKEND_NAME)
def test_squared_edt_matches_brute_force(backend, rng):
    for _ in range(15):
        mask = random_mask(rng)
        assert np.array_equal(backend.squared_distance_transform(mask), brute_sq_edt(mask))


def test_edt_backends_identical_on_larger_rasters(rng):
    mask = rng.random((160, 90)) < 0.02
    mask[0, 0] = True
    a = numpy_backend.squared_distance_transform(mask)
    b = numba_backend.squared_distance_transform(mask)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.BACKEND_NAME)
@pytest.mark.parametrize("radius", [1, 2, 3])
def test_morphology_matches_brute_force(backend, radius, rng):
    for _ in range(8):
        mask = random_mask(rng)
        assert np.array_equal(backend.binary_dilate(mask, radius), brute_dilate(mask, radius))
        assert np.array_equal(backend.binary_erode(mask, radius), brute_erode(mask, radius))


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.BACKEND_NAME)
@pytest.mark.parametrize("radius", [1, 2])
def test_median_matches_brute_force(backend, radius, rng):
    for _ in range(8):
        mask = random_mask(rng)
        assert np.array_equal(backend.median_filter_binary(mask, radius), brute_median(mask, radius))


def test_median_checkerboard_matches_oracle():
    board = (np.add.outer(np.arange(12), np.arange(12)) % 2).astype(bool)
    expected = brute_median(board, 1)
    assert np.array_equal(kernels.median_filter_binary(board, 1), expected)


@pytest.mark.parametrize("connectivity", [4, 8])
def test_labeling_backends_agree_and_count_components(connectivity, rng):
    for _ in range(15):
        mask = random_mask(rng)
        la, na = numpy_backend.label_components(mask, connectivity)
        lb, nb = numba_backend.label_components(mask, connectivity)
        assert np.array_equal(la, lb)
        assert na == nb
        if na:
            ids = np.unique(la[la > 0])
            assert np.array_equal(ids, np.arange(1, na + 1))  # contiguous raster-order labels
        assert ((la > 0) == mask).all()


def test_labeling_known_shapes():
    mask = np.zeros((7, 7), dtype=bool)
    mask[1, 1], mask[2, 2] = True, True  # diagonal touch
    labels8, n8 = kernels.label_components(mask, 8)
    labels4, n4 = kernels.label_components(mask, 4)
    assert n8 == 1 and n4 == 2
    assert labels4[1, 1] == 1 and labels4[2, 2] == 2


def test_hausdorff_backends_agree(rng):
    for _ in range(15):
        a = rng.integers(0, 30, size=(rng.integers(1, 40), 2))
        b = rng.integers(0, 30, size=(rng.integers(1, 40), 2))
        assert numpy_backend.hausdorff_sq(a, b) == numba_backend.hausdorff_sq(a, b)


def test_hausdorff_known_value():
    assert kernels.hausdorff_distance([[0, 0]], [[3, 4]]) == 5.0
    assert kernels.hausdorff_distance([[1, 1]], [[1, 1]]) == 0.0


def test_distance_transform_empty_mask_is_inf():
    out = kernels.distance_transform(np.zeros((4, 5), dtype=bool))
    assert np.isinf(out).all()


def test_dispatch_validation():
    with pytest.raises(ValueError):
        kernels.squared_distance_transform(np.zeros((3, 3), dtype=bool))
    with pytest.raises(ValueError):
        kernels.binary_dilate(np.zeros((3, 3), dtype=bool), -1)
    with pytest.raises(ValueError):
        kernels.label_components(np.zeros((3, 3), dtype=bool), connectivity=6)
    with pytest.raises(ValueError):
        kernels.hausdorff_distance(np.zeros((0, 2)), [[0, 0]])
    with pytest.raises(ValueError):
        kernels.median_filter_binary(np.zeros((2, 2, 2), dtype=bool), 1)


def test_backend_env_selection(monkeypatch):
    import importlib

    monkeypatch.setenv(kernels.BACKEND_ENV, "numpy")
    mod = importlib.reload(kernels)
    try:
        assert mod.backend_name() == "numpy"
        monkeypatch.setenv(kernels.BACKEND_ENV, "nonsense")
        with pytest.raises(ValueError):
            importlib.reload(kernels)
    finally:
        monkeypatch.delenv(kernels.BACKEND_ENV)
        importlib.reload(kernels)
