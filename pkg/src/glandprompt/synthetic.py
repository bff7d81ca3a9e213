"""Parametric synthetic gland dataset in the same directory layout the loader reads.

Elliptical "glands" on a neutral background; grade drives the interior
texture - benign surrogates are smooth low-frequency blobs, malignant
surrogates high-frequency speckle - so both grade classification and CAM
localization are learnable at toy scale. The background distribution is
class-independent by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import imageio.v3 as iio
import numpy as np

from glandprompt import kernels


class SynthesisError(RuntimeError):
    pass


@dataclass
class SynthSpec:
    n_train: int = 40
    n_test_a: int = 10
    n_test_b: int = 0
    canvas: int = 500
    min_glands: int = 2
    max_glands: int = 5
    axis_min: int = 45
    axis_max: int = 85
    margin: int = 8            # minimum gap between gland masks
    max_attempts: int = 300    # placement retries per gland before giving up
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.min_glands <= self.max_glands:
            raise ValueError("need 0 <= min_glands <= max_glands")
        if self.axis_max * 2 + self.margin >= self.canvas:
            raise ValueError("glands of axis_max cannot fit on the canvas")


def _ellipse_mask(canvas: int, center, axes, angle) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(canvas), np.arange(canvas), indexing="ij")
    dr, dc = rr - center[0], cc - center[1]
    cos, sin = np.cos(angle), np.sin(angle)
    u = (dr * cos + dc * sin) / axes[0]
    v = (-dr * sin + dc * cos) / axes[1]
    return u * u + v * v <= 1.0


def _place_glands(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Instance annotation with non-overlapping ellipses, labels 1..k."""
    n = int(rng.integers(spec.min_glands, spec.max_glands + 1))
    annotation = np.zeros((spec.canvas, spec.canvas), dtype=np.int32)
    blocked = np.zeros_like(annotation, dtype=bool)
    for label in range(1, n + 1):
        for attempt in range(spec.max_attempts):
            axes = rng.uniform(spec.axis_min, spec.axis_max, size=2)
            pad = int(np.ceil(axes.max())) + 1
            center = rng.uniform(pad, spec.canvas - pad, size=2)
            angle = rng.uniform(0, np.pi)
            mask = _ellipse_mask(spec.canvas, center, axes, angle)
            if not (mask & blocked).any():
                annotation[mask] = label
                blocked |= kernels.binary_dilate(mask, spec.margin)
                break
        else:
            raise SynthesisError(
                f"could not place gland {label}/{n} after {spec.max_attempts} attempts; "
                "reduce gland count/size or enlarge the canvas"
            )
    return annotation


def _smooth_field(canvas: int, cells: int, rng) -> np.ndarray:
    """Low-frequency noise in [0, 1]: a coarse random grid upsampled bilinearly."""
    coarse = rng.random((cells, cells))
    idx = np.linspace(0, cells - 1, canvas)
    i0 = np.floor(idx).astype(int)
    i1 = np.minimum(i0 + 1, cells - 1)
    t = idx - i0
    rows = coarse[i0][:, i0] * np.outer(1 - t, 1 - t) + coarse[i0][:, i1] * np.outer(1 - t, t) \
        + coarse[i1][:, i0] * np.outer(t, 1 - t) + coarse[i1][:, i1] * np.outer(t, t)
    return rows


def _render(annotation: np.ndarray, grade: str, rng) -> np.ndarray:
    canvas = annotation.shape[0]
    image = np.empty((canvas, canvas, 3), dtype=np.float64)
    image[..., 0] = 228.0
    image[..., 1] = 226.0
    image[..., 2] = 222.0
    image += rng.normal(0, 3.0, image.shape)  # class-independent background grain

    foreground = annotation > 0
    # Both grades share one gland palette (saturated purple on neutral beige,
    # so glands are segmentable regardless of grade). Grade evidence is local
    # to the glands: benign surrogates have smooth low-frequency interiors
    # behind a thick organized rim, malignant surrogates fine speckle behind
    # a thin broken-down rim. Local cues keep the classifier's activation
    # maps anchored to gland regions.
    if grade == "benign":
        field = _smooth_field(canvas, 8, rng)            # ~60 px blobs
        rim_width = 7
        shift = 14.0
    else:
        field = _smooth_field(canvas, canvas // 5, rng)  # ~5 px speckle
        rim_width = 2
        shift = -14.0
    tint = np.stack([
        150.0 + shift + 60.0 * field,
        112.0 + 50.0 * field,
        168.0 - shift + 60.0 * field,
    ], axis=-1)
    image[foreground] = tint[foreground]

    rim = foreground & ~kernels.binary_erode(foreground, rim_width)
    image[rim] *= 0.6
    return np.clip(image, 0, 255).astype(np.uint8)


def generate(spec: SynthSpec, out_dir) -> Path:
    """Write a complete synthetic dataset directory; returns its path.

    Output layout matches the loader contract: <id>.png, <id>_anno.png
    (16-bit instance labels) and grades.csv. Deterministic for a fixed spec.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    rows = []
    plan = (
        [("train", i) for i in range(1, spec.n_train + 1)]
        + [("testA", i) for i in range(1, spec.n_test_a + 1)]
        + [("testB", i) for i in range(1, spec.n_test_b + 1)]
    )
    for split, index in plan:
        image_id = f"{split}_{index}"
        grade = "benign" if index % 2 == 1 else "malignant"
        annotation = _place_glands(spec, rng)
        image = _render(annotation, grade, rng)
        iio.imwrite(out / f"{image_id}.png", image)
        iio.imwrite(out / f"{image_id}_anno.png", annotation.astype(np.uint16))
        rows.append((image_id, grade))
    with open(out / "grades.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "grade"])
        writer.writerows(rows)
    return out
