"""Post-processing: stitching, thresholding, overlap removal, cleaning."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glandprompt.postprocess import (
    binarize,
    clean,
    fill_small_holes,
    remove_contour_overlap,
    remove_small_objects,
    stitch_patches,
)
from glandprompt.dataset import corner_offsets
from glandprompt import kernels

from oracles import brute_median, brute_stitch, flood_fill_holes


class TestStitch:
    def test_single_full_patch_is_identity(self, rng):
        patch = rng.random((9, 11))
        out = stitch_patches([patch], [(0, 0)], 9, 11)
        assert np.allclose(out, patch)

    def test_overlap_averages(self):
        a = np.full((4, 4), 0.8)
        b = np.full((4, 4), 0.6)
        out = stitch_patches([a, b], [(0, 0), (0, 2)], 4, 6)
        assert np.allclose(out[:, 2:4], 0.7)
        assert np.allclose(out[:, :2], 0.8)
        assert np.allclose(out[:, 4:], 0.6)

    def test_four_corner_coverage_matches_oracle(self, rng):
        H = W = 100
        patches = [rng.random((64, 64)) for _ in range(4)]
        offsets = corner_offsets(H, W, 64)
        got = stitch_patches(patches, offsets, H, W)
        assert np.allclose(got, brute_stitch(patches, offsets, H, W))

    def test_uncovered_pixel_errors(self):
        with pytest.raises(ValueError, match="not covered"):
            stitch_patches([np.ones((2, 2))], [(0, 0)], 4, 4)

    def test_out_of_bounds_patch_errors(self):
        with pytest.raises(ValueError, match="exceeds"):
            stitch_patches([np.ones((4, 4))], [(2, 2)], 5, 5)

    @settings(deadline=None, max_examples=10)
    @given(order=st.permutations(range(4)))
    def test_patch_order_invariance(self, order):
        r = np.random.default_rng(3)
        patches = [r.random((8, 8)) for _ in range(4)]
        offsets = corner_offsets(12, 12, 8)
        base = stitch_patches(patches, offsets, 12, 12)
        shuffled = stitch_patches([patches[i] for i in order], [offsets[i] for i in order], 12, 12)
        assert np.allclose(base, shuffled)


class TestBinarize:
    def test_all_below(self):
        assert not binarize(np.full((3, 3), 0.4)).any()

    def test_all_above(self):
        assert binarize(np.full((3, 3), 0.6)).all()

    def test_exactly_half_is_foreground(self):
        assert binarize(np.full((2, 2), 0.5)).all()


class TestOverlapRemoval:
    def test_disjoint_keeps_gland(self, rng):
        gland = rng.random((10, 10)) < 0.4
        contour = ~gland & (rng.random((10, 10)) < 0.3)
        assert np.array_equal(remove_contour_overlap(gland, contour), gland)

    def test_contour_superset_empties_gland(self, rng):
        gland = rng.random((10, 10)) < 0.4
        assert not remove_contour_overlap(gland, np.ones((10, 10), bool)).any()

    def test_bridged_glands_split_into_two_components(self):
        gland = np.zeros((12, 22), dtype=bool)
        gland[3:9, 2:9] = True
        gland[3:9, 13:20] = True
        gland[5:7, 9:13] = True   # 2-px-high neck bridging the blobs
        contour = np.zeros_like(gland)
        contour[:, 9:13] = True   # contour covers the neck
        assert kernels.label_components(gland, 8)[1] == 1
        removed = remove_contour_overlap(gland, contour)
        assert kernels.label_components(removed, 8)[1] == 2

    @settings(deadline=None, max_examples=20)
    @given(seed=st.integers(0, 1000))
    def test_output_subset_of_gland(self, seed):
        r = np.random.default_rng(seed)
        gland = r.random((12, 12)) < 0.5
        contour = r.random((12, 12)) < 0.3
        out = remove_contour_overlap(gland, contour)
        assert not (out & ~gland).any()

    def test_shape_mismatch_errors(self):
        with pytest.raises(ValueError):
            remove_contour_overlap(np.zeros((3, 3), bool), np.zeros((4, 3), bool))


class TestClean:
    def test_single_dot_removed(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[10, 10] = True
        assert clean(mask, median_radius=0, min_object_px=50, max_hole_px=0).max() == 0

    def test_hole_filled_matches_flood_fill_oracle(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[4:15, 4:15] = True
        mask[8:10, 8:10] = False  # 4-px hole
        mask[0:2, 17:20] = False  # border background stays
        out = clean(mask, median_radius=0, min_object_px=1, max_hole_px=10)
        assert np.array_equal(out > 0, flood_fill_holes(mask, 10))
        assert out.max() == 1

    def test_large_hole_preserved(self):
        mask = np.zeros((30, 30), dtype=bool)
        mask[2:28, 2:28] = True
        mask[10:20, 10:20] = False  # 100-px hole > limit
        out = clean(mask, median_radius=0, min_object_px=1, max_hole_px=50)
        assert not (out[10:20, 10:20] > 0).any()

    def test_median_step_matches_oracle(self, rng):
        mask = rng.random((30, 30)) < 0.5
        out = clean(mask, median_radius=1, min_object_px=0, max_hole_px=0)
        assert np.array_equal(out > 0, brute_median(mask, 1))

    def test_idempotent_excluding_median(self, rng):
        for _ in range(10):
            mask = rng.random((40, 40)) < 0.45
            once = clean(mask, median_radius=0, min_object_px=12, max_hole_px=9)
            twice = clean(once > 0, median_radius=0, min_object_px=12, max_hole_px=9)
            assert np.array_equal(once, twice)

    def test_labels_contiguous_from_one(self, rng):
        for _ in range(5):
            mask = rng.random((40, 40)) < 0.35
            labels = clean(mask, median_radius=1, min_object_px=4, max_hole_px=4)
            ids = np.unique(labels[labels > 0])
            assert np.array_equal(ids, np.arange(1, len(ids) + 1))

    def test_negative_thresholds_error(self):
        with pytest.raises(ValueError):
            clean(np.zeros((4, 4), bool), median_radius=-1)

    def test_remove_small_objects_and_fill_holes_directly(self):
        mask = np.zeros((15, 15), dtype=bool)
        mask[2:10, 2:10] = True
        mask[12, 12] = True
        kept = remove_small_objects(mask, 5)
        assert kept[2:10, 2:10].all() and not kept[12, 12]
        holed = mask.copy()
        holed[5, 5] = False
        assert fill_small_holes(holed, 4)[5, 5]
