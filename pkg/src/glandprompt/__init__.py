"""Grade-prompted gland segmentation pipeline.

A binary grade classifier produces class-activation heat maps which, after a
prompt adapter, drive the gland branch of a dual-decoder segmentation network.
Includes data preparation, staged training, post-processing and object-level
evaluation, plus a synthetic dataset generator so the whole pipeline runs at
desk scale.
"""

__version__ = "0.1.0"

_SUBMODULE_OF = {
    "ImageRecord": "dataset",
    "PatchSample": "dataset",
    "load_glas_dataset": "dataset",
    "extract_corner_patches": "dataset",
    "augment_rotations": "dataset",
    "derive_contour_mask": "dataset",
    "compute_weight_map": "dataset",
    "object_f1": "metrics",
    "object_dice": "metrics",
    "object_hausdorff": "metrics",
    "aggregate": "metrics",
    "stitch_patches": "postprocess",
    "binarize": "postprocess",
    "remove_contour_overlap": "postprocess",
    "clean": "postprocess",
    "weighted_mse": "training",
}

__all__ = sorted(_SUBMODULE_OF) + ["__version__"]


def __getattr__(name):
    # Lazy re-exports keep `import glandprompt` cheap (no torch/numba import).
    if name in _SUBMODULE_OF:
        import importlib

        mod = importlib.import_module(f"glandprompt.{_SUBMODULE_OF[name]}")
        return getattr(mod, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
