"""GlaS-format ingestion, patch extraction, contour and weight-map generation.

The on-disk contract mirrors the public gland segmentation challenge layout:
per-image RGB rasters (`<id>.<ext>`), instance-labeled annotation rasters
(`<id>_anno.<ext>`, lossless integer images) and a grade table CSV with one
header line and `id,grade` rows. Splits come from the id prefix
(train / testA / testB).
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import imageio.v3 as iio
import numpy as np

from glandprompt import kernels

GRADES = ("benign", "malignant")
IMAGE_EXTENSIONS = (".bmp", ".png", ".tif", ".tiff", ".jpg", ".jpeg")
SPLITS = ("train", "testA", "testB")

PATCH_MANIFEST_FIELDS = (
    "source_id", "grade", "row", "col", "rotation",
    "image", "gland", "contour", "weight",
)


class GlasDataError(RuntimeError):
    """Raised when a dataset directory violates the expected layout."""


@dataclass
class ImageRecord:
    """One source image: RGB raster, instance annotation and grade label."""

    id: str
    image: np.ndarray       # H x W x 3 uint8
    annotation: np.ndarray  # H x W int32, 0 = background
    grade: str

    def __post_init__(self):
        if self.image.shape[:2] != self.annotation.shape:
            raise GlasDataError(
                f"{self.id}: image {self.image.shape[:2]} and annotation "
                f"{self.annotation.shape} sizes differ"
            )
        if self.grade not in GRADES:
            raise GlasDataError(f"{self.id}: unknown grade {self.grade!r}")


@dataclass
class CornerCrop:
    """Aligned image/annotation crop at one corner offset (a PatchSample precursor)."""

    source_id: str
    grade: str
    image: np.ndarray
    annotation: np.ndarray
    offset: tuple[int, int]
    rotation_quarter_turns: int = 0


@dataclass
class PatchSample:
    """A fully prepared training sample."""

    image: np.ndarray
    gland_mask: np.ndarray
    contour_mask: np.ndarray
    weight_map: np.ndarray
    grade: str
    source_id: str
    offset: tuple[int, int]
    rotation_quarter_turns: int


def _read_grade_table(root: Path) -> dict[str, str]:
    candidates = sorted(p for p in root.iterdir() if p.suffix.lower() == ".csv")
    if not candidates:
        raise GlasDataError(f"no grade table (*.csv) found in {root}")
    grades: dict[str, str] = {}
    with open(candidates[0], newline="") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:  # one header line by contract
        if not row or not row[0].strip():
            continue
        image_id = row[0].strip()
        if len(row) < 2:
            raise GlasDataError(f"grade table row for {image_id!r} has no grade column")
        grade = row[1].strip().lower()
        if grade not in GRADES:
            raise GlasDataError(f"unknown grade {row[1]!r} for image {image_id!r}")
        grades[image_id] = grade
    return grades


def _split_of(image_id: str) -> str:
    for split in SPLITS:
        if image_id.startswith(split):
            return split
    raise GlasDataError(f"image id {image_id!r} matches no split prefix {SPLITS}")


def _sort_key(image_id: str):
    m = re.search(r"(\d+)$", image_id)
    return (image_id.rstrip("0123456789"), int(m.group(1)) if m else -1)


def _read_image_rgb(path: Path) -> np.ndarray:
    arr = iio.imread(path)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.shape[-1] == 4:
        arr = arr[..., :3]
    return np.ascontiguousarray(arr.astype(np.uint8))


def _read_annotation(path: Path) -> np.ndarray:
    arr = iio.imread(path)
    if arr.ndim == 3:  # some tools save label maps with redundant channels
        arr = arr[..., 0]
    return arr.astype(np.int32)


def load_glas_dataset(root_path, *, min_size: int | None = None) -> dict[str, list[ImageRecord]]:
    """Load a GlaS-format directory into records partitioned by split.

    Every image must have an annotation raster and a grade-table entry;
    violations are hard errors naming the offending id. When min_size is
    given, each image must be at least min_size x min_size.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise GlasDataError(f"dataset root {root} is not a directory")

    image_paths: dict[str, Path] = {}
    anno_paths: dict[str, Path] = {}
    for path in sorted(root.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        stem = path.stem
        if stem.endswith("_anno"):
            anno_paths[stem[: -len("_anno")]] = path
        else:
            image_paths[stem] = path

    if not image_paths:
        raise GlasDataError(f"no records found in {root}")

    grades = _read_grade_table(root)
    splits: dict[str, list[ImageRecord]] = {s: [] for s in SPLITS}
    for image_id in sorted(image_paths, key=_sort_key):
        if image_id not in anno_paths:
            raise GlasDataError(f"missing annotation raster for image {image_id!r}")
        if image_id not in grades:
            raise GlasDataError(f"missing grade entry for image {image_id!r}")
        split = _split_of(image_id)
        image = _read_image_rgb(image_paths[image_id])
        annotation = _read_annotation(anno_paths[image_id])
        if min_size is not None and min(image.shape[:2]) < min_size:
            raise GlasDataError(
                f"{image_id}: image {image.shape[:2]} smaller than required "
                f"{min_size}x{min_size}"
            )
        splits[split].append(ImageRecord(image_id, image, annotation, grades[image_id]))
    return splits


def corner_offsets(height: int, width: int, patch: int) -> list[tuple[int, int]]:
    """The four corner crop offsets, top-left first, row-major corner order."""
    if height < patch or width < patch:
        raise ValueError(f"image {height}x{width} smaller than patch size {patch}")
    return [(0, 0), (0, width - patch), (height - patch, 0), (height - patch, width - patch)]


def extract_corner_patches(record: ImageRecord, patch: int = 400) -> list[CornerCrop]:
    """Crop the four partially overlapping corner windows of a record."""
    crops = []
    for r, c in corner_offsets(record.image.shape[0], record.image.shape[1], patch):
        crops.append(CornerCrop(
            source_id=record.id,
            grade=record.grade,
            image=record.image[r:r + patch, c:c + patch],
            annotation=record.annotation[r:r + patch, c:c + patch],
            offset=(r, c),
        ))
    return crops


def rotate_quarter(arr: np.ndarray, k: int) -> np.ndarray:
    """Rotate a square raster by k quarter turns; pixel (r, c) -> (c, N-1-r) for k=1."""
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"rotation requires a square raster, got {arr.shape[:2]}")
    return np.ascontiguousarray(np.rot90(arr, -(k % 4)))


def augment_rotations(crop: CornerCrop) -> list[CornerCrop]:
    """All four quarter-turn rotations of a crop; image and annotation rotate together."""
    variants = []
    for k in range(4):
        variants.append(CornerCrop(
            source_id=crop.source_id,
            grade=crop.grade,
            image=rotate_quarter(crop.image, k),
            annotation=rotate_quarter(crop.annotation, k),
            offset=crop.offset,
            rotation_quarter_turns=k,
        ))
    return variants


def derive_contour_mask(gland: np.ndarray, dilate_radius: int = 2, erode_radius: int = 2) -> np.ndarray:
    """Contour annotation: dilated minus eroded gland annotation, per instance.

    Each labeled object is dilated and eroded separately and the rings are
    unioned, so touching objects get distinct separating contours. A boolean
    input mask is first split into 8-connected components.
    """
    if dilate_radius < 1 or erode_radius < 1:
        raise ValueError("dilate_radius and erode_radius must be >= 1")
    gland = np.asarray(gland)
    if gland.dtype == bool:
        labels, _ = kernels.label_components(gland, connectivity=8)
    else:
        labels = gland.astype(np.int64)
    contour = np.zeros(labels.shape, dtype=bool)
    for obj in np.unique(labels):
        if obj <= 0:
            continue
        mask = labels == obj
        ring = kernels.binary_dilate(mask, dilate_radius) & ~kernels.binary_erode(mask, erode_radius)
        contour |= ring
    return contour


def compute_weight_map(
    gland: np.ndarray,
    w0: float = 10.0,
    sigma: float = 5.0,
    class_weights: tuple[float, float] | None = None,
) -> np.ndarray:
    """Per-pixel loss weights emphasizing narrow gaps between instances.

    w(x) = w_c(x) + w0 * exp(-(d1(x)+d2(x))^2 / (2 sigma^2)) with d1, d2 the
    Euclidean distances to the nearest and second-nearest objects. With fewer
    than two objects the missing distance is +inf and the term vanishes. When
    class_weights is None the background/foreground weights balance inverse
    pixel frequency.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    labels = np.asarray(gland)
    if labels.dtype == bool:
        labels = labels.astype(np.int32)
    foreground = labels > 0

    if class_weights is None:
        n_fg = int(foreground.sum())
        n_bg = foreground.size - n_fg
        if n_fg > 0 and n_bg > 0:
            class_weights = (foreground.size / (2.0 * n_bg), foreground.size / (2.0 * n_fg))
        else:
            class_weights = (1.0, 1.0)
    w_bg, w_fg = class_weights

    d1 = np.full(labels.shape, np.inf)
    d2 = np.full(labels.shape, np.inf)
    for obj in np.unique(labels):
        if obj <= 0:
            continue
        d = kernels.distance_transform(labels == obj)
        nearer = np.minimum(d1, d)
        d2 = np.minimum(d2, np.maximum(d1, d))
        d1 = nearer

    gap = d1 + d2  # +inf with fewer than two objects; the boost then vanishes
    boost = w0 * np.exp(-(gap * gap) / (2.0 * sigma * sigma))
    return np.where(foreground, w_fg, w_bg) + boost


def prepare_patches(
    records: list[ImageRecord],
    out_dir,
    patch: int = 400,
    dilate_radius: int = 2,
    erode_radius: int = 2,
    w0: float = 10.0,
    sigma: float = 5.0,
) -> Path:
    """Generate all corner/rotation patches for a split and write the manifest.

    Contour and weight maps are derived once per source image (before
    cropping), then cropped and rotated with the image. Returns the manifest
    path; rasters land next to it (images and masks as PNG, weight maps as
    32-bit float .npy).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for record in records:
        contour_full = derive_contour_mask(record.annotation, dilate_radius, erode_radius)
        weight_full = compute_weight_map(record.annotation, w0=w0, sigma=sigma).astype(np.float32)
        for crop in extract_corner_patches(record, patch):
            r, c = crop.offset
            contour_crop = contour_full[r:r + patch, c:c + patch]
            weight_crop = weight_full[r:r + patch, c:c + patch]
            for k in range(4):
                stem = f"{record.id}_r{r:05d}c{c:05d}k{k}"
                image = rotate_quarter(crop.image, k)
                gland = rotate_quarter((crop.annotation > 0).astype(np.uint8), k)
                contour = rotate_quarter(contour_crop.astype(np.uint8), k)
                weight = rotate_quarter(weight_crop, k)
                iio.imwrite(out / f"{stem}.png", image)
                iio.imwrite(out / f"{stem}_gland.png", gland * np.uint8(255))
                iio.imwrite(out / f"{stem}_contour.png", contour * np.uint8(255))
                np.save(out / f"{stem}_weight.npy", weight)
                rows.append({
                    "source_id": record.id,
                    "grade": record.grade,
                    "row": r,
                    "col": c,
                    "rotation": k,
                    "image": f"{stem}.png",
                    "gland": f"{stem}_gland.png",
                    "contour": f"{stem}_contour.png",
                    "weight": f"{stem}_weight.npy",
                })
    manifest = out / "patches.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PATCH_MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return manifest


def read_patch_manifest(manifest_path) -> list[dict]:
    """Rows of a patch manifest with offsets/rotation parsed to ints."""
    manifest_path = Path(manifest_path)
    with open(manifest_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["row"] = int(row["row"])
        row["col"] = int(row["col"])
        row["rotation"] = int(row["rotation"])
    return rows


def load_patch(manifest_path, row: dict) -> PatchSample:
    """Materialize one manifest row into a PatchSample."""
    base = Path(manifest_path).parent
    return PatchSample(
        image=_read_image_rgb(base / row["image"]),
        gland_mask=iio.imread(base / row["gland"]) > 0,
        contour_mask=iio.imread(base / row["contour"]) > 0,
        weight_map=np.load(base / row["weight"]),
        grade=row["grade"],
        source_id=row["source_id"],
        offset=(row["row"], row["col"]),
        rotation_quarter_turns=row["rotation"],
    )
