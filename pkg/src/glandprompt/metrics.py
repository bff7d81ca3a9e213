"""Object-level segmentation metrics: F1, object Dice and object Hausdorff.

All three operate on instance-labeled masks (0 = background, each positive
label one object; connectivity is never re-derived). Definitions follow the
gland-challenge conventions:

* F1: a predicted object is a true positive iff it overlaps one ground-truth
  object by more than 50% of that object's area; matching is greedy by
  overlap with ties broken by lower label id, and each object on either side
  matches at most once.
* Object Dice / Hausdorff: area-weighted sums over ground-truth objects
  against their maximal-overlap predictions plus the mirrored sum over
  predicted objects, averaged.
* Hausdorff uses boundary pixel sets (object pixels 4-adjacent to anything
  outside the object, image border included) under the Euclidean metric. An
  object with no overlapping counterpart measures against the entire opposing
  foreground boundary; if the opposing map is empty a penalty applies
  (default: image diagonal).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from glandprompt import kernels


@dataclass
class ObjectF1:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass
class _Accumulator:
    """Per-image object-weighted sums, poolable across a split."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    gt_area: int = 0
    pred_area: int = 0
    gt_dice_sum: float = 0.0
    pred_dice_sum: float = 0.0
    gt_haus_sum: float = 0.0
    pred_haus_sum: float = 0.0


@dataclass
class ImageEvaluation:
    image_id: str
    counts: ObjectF1
    dice: float
    hausdorff: float
    n_pixels: int
    acc: _Accumulator = field(repr=False)


@dataclass
class MetricsReport:
    f1: float
    object_dice: float
    object_hausdorff: float
    mode: str
    per_image: list[ImageEvaluation]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["image_id", "tp", "fp", "fn", "f1", "object_dice", "object_hausdorff"])
            for ev in self.per_image:
                writer.writerow([
                    ev.image_id, ev.counts.tp, ev.counts.fp, ev.counts.fn,
                    f"{ev.counts.f1:.6f}", f"{ev.dice:.6f}", f"{ev.hausdorff:.6f}",
                ])
            writer.writerow([
                f"aggregate[{self.mode}]", "", "", "",
                f"{self.f1:.6f}", f"{self.object_dice:.6f}", f"{self.object_hausdorff:.6f}",
            ])

    def format_table(self, title: str = "") -> str:
        lines = []
        if title:
            lines.append(title)
        lines.append(f"{'image':<16}{'F1':>10}{'ObjDice':>10}{'ObjHaus':>12}")
        for ev in self.per_image:
            lines.append(f"{ev.image_id:<16}{ev.counts.f1:>10.4f}{ev.dice:>10.4f}{ev.hausdorff:>12.4f}")
        lines.append(f"{'[' + self.mode + ']':<16}{self.f1:>10.4f}{self.object_dice:>10.4f}{self.object_hausdorff:>12.4f}")
        return "\n".join(lines)


def _check_shapes(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} shapes differ")
    return pred.astype(np.int64, copy=False), gt.astype(np.int64, copy=False)


def _objects(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted positive label ids and their pixel areas."""
    ids, counts = np.unique(mask, return_counts=True)
    keep = ids > 0
    return ids[keep], counts[keep]


def _overlap_matrix(pred, gt, pred_ids, gt_ids) -> np.ndarray:
    """Pixel overlap counts indexed by (pred object, gt object)."""
    both = (pred > 0) & (gt > 0)
    if not both.any():
        return np.zeros((pred_ids.size, gt_ids.size), dtype=np.int64)
    p_idx = np.searchsorted(pred_ids, pred[both])
    g_idx = np.searchsorted(gt_ids, gt[both])
    flat = np.bincount(p_idx * gt_ids.size + g_idx, minlength=pred_ids.size * gt_ids.size)
    return flat.reshape(pred_ids.size, gt_ids.size)


def _boundary_points(mask: np.ndarray) -> np.ndarray:
    """Pixels of mask with a 4-neighbor outside it (image border counts as outside)."""
    pad = np.pad(mask, 1, constant_values=False)
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    return np.argwhere(mask & ~interior)


def _f1_from_counts(tp: int, fp: int, fn: int) -> ObjectF1:
    if tp == 0 and fp == 0 and fn == 0:
        # Both maps empty: vacuously perfect, consistent with Dice = 1.
        return ObjectF1(0, 0, 0, 1.0, 1.0, 1.0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ObjectF1(tp, fp, fn, precision, recall, f1)


def object_f1(pred, gt) -> ObjectF1:
    """Object-detection counts and F1 under the >50%-of-gt-area matching rule."""
    pred, gt = _check_shapes(pred, gt)
    pred_ids, _ = _objects(pred)
    gt_ids, gt_areas = _objects(gt)
    overlap = _overlap_matrix(pred, gt, pred_ids, gt_ids)
    pi, gi = np.nonzero(overlap * 2 > gt_areas[None, :])
    order = np.lexsort((pred_ids[pi], gt_ids[gi], -overlap[pi, gi]))
    pred_taken = np.zeros(pred_ids.size, dtype=bool)
    gt_taken = np.zeros(gt_ids.size, dtype=bool)
    tp = 0
    for idx in order:
        i, j = pi[idx], gi[idx]
        if not pred_taken[i] and not gt_taken[j]:
            pred_taken[i] = gt_taken[j] = True
            tp += 1
    return _f1_from_counts(tp, int(pred_ids.size) - tp, int(gt_ids.size) - tp)


def _directional_sums(ids_a, areas_a, ids_b, areas_b, overlap_ab, masks_a, masks_b,
                      opposing_boundary, penalty):
    """Weighted Dice/Hausdorff sums over side-a objects vs their best side-b match."""
    dice_sum = 0.0
    haus_sum = 0.0
    for ai in range(ids_a.size):
        row = overlap_ab[ai]
        best = int(np.argmax(row)) if row.size else -1
        if best >= 0 and row[best] > 0:
            dice = 2.0 * row[best] / (areas_a[ai] + areas_b[best])
            haus = kernels.hausdorff_distance(
                _boundary_points(masks_a[ai]), _boundary_points(masks_b[best])
            )
        else:
            dice = 0.0
            haus = (
                kernels.hausdorff_distance(_boundary_points(masks_a[ai]), opposing_boundary)
                if opposing_boundary is not None else penalty
            )
        dice_sum += areas_a[ai] * dice
        haus_sum += areas_a[ai] * haus
    return dice_sum, haus_sum


def _evaluate_pair(pred, gt, penalty=None) -> _Accumulator:
    pred, gt = _check_shapes(pred, gt)
    if penalty is None:
        penalty = float(np.hypot(*pred.shape))
    pred_ids, pred_areas = _objects(pred)
    gt_ids, gt_areas = _objects(gt)
    overlap = _overlap_matrix(pred, gt, pred_ids, gt_ids)

    pred_masks = [pred == i for i in pred_ids]
    gt_masks = [gt == j for j in gt_ids]
    pred_boundary = (
        np.concatenate([_boundary_points(m) for m in pred_masks]) if pred_masks else None
    )
    gt_boundary = (
        np.concatenate([_boundary_points(m) for m in gt_masks]) if gt_masks else None
    )

    gt_dice, gt_haus = _directional_sums(
        gt_ids, gt_areas, pred_ids, pred_areas, overlap.T, gt_masks, pred_masks,
        pred_boundary, penalty,
    )
    pred_dice, pred_haus = _directional_sums(
        pred_ids, pred_areas, gt_ids, gt_areas, overlap, pred_masks, gt_masks,
        gt_boundary, penalty,
    )
    counts = object_f1(pred, gt)
    return _Accumulator(
        tp=counts.tp, fp=counts.fp, fn=counts.fn,
        gt_area=int(gt_areas.sum()), pred_area=int(pred_areas.sum()),
        gt_dice_sum=gt_dice, pred_dice_sum=pred_dice,
        gt_haus_sum=gt_haus, pred_haus_sum=pred_haus,
    )


def _dice_from_acc(acc: _Accumulator) -> float:
    if acc.gt_area == 0 and acc.pred_area == 0:
        return 1.0
    gt_term = acc.gt_dice_sum / acc.gt_area if acc.gt_area else 0.0
    pred_term = acc.pred_dice_sum / acc.pred_area if acc.pred_area else 0.0
    return 0.5 * (gt_term + pred_term)


def _haus_from_acc(acc: _Accumulator) -> float:
    if acc.gt_area == 0 and acc.pred_area == 0:
        return 0.0
    gt_term = acc.gt_haus_sum / acc.gt_area if acc.gt_area else None
    pred_term = acc.pred_haus_sum / acc.pred_area if acc.pred_area else None
    # One side without objects mirrors the other (whose terms are penalties).
    if gt_term is None:
        gt_term = pred_term
    if pred_term is None:
        pred_term = gt_term
    return 0.5 * (gt_term + pred_term)


def object_dice(pred, gt) -> float:
    """Object-level Dice in [0, 1]; both maps empty gives 1.0 by convention."""
    return _dice_from_acc(_evaluate_pair(pred, gt))


def object_hausdorff(pred, gt, penalty: float | None = None) -> float:
    """Object-level Hausdorff distance (>= 0); both maps empty gives 0.0."""
    return _haus_from_acc(_evaluate_pair(pred, gt, penalty=penalty))


def evaluate_image(image_id: str, pred, gt, penalty: float | None = None) -> ImageEvaluation:
    """All three metrics for one prediction/ground-truth pair."""
    pred_arr = np.asarray(pred)
    acc = _evaluate_pair(pred, gt, penalty=penalty)
    return ImageEvaluation(
        image_id=image_id,
        counts=_f1_from_counts(acc.tp, acc.fp, acc.fn),
        dice=_dice_from_acc(acc),
        hausdorff=_haus_from_acc(acc),
        n_pixels=int(pred_arr.size),
        acc=acc,
    )


def aggregate(per_image: list[ImageEvaluation], mode: str = "pooled") -> MetricsReport:
    """Combine per-image evaluations into a split-level report.

    "pooled" (default, contest-style) pools tp/fp/fn and object-weighted sums
    across the split; "per_image" takes image-pixel-count-weighted means of
    the per-image values.
    """
    if not per_image:
        raise ValueError("aggregate requires a nonempty split")
    if mode == "pooled":
        total = _Accumulator()
        for ev in per_image:
            a = ev.acc
            total.tp += a.tp
            total.fp += a.fp
            total.fn += a.fn
            total.gt_area += a.gt_area
            total.pred_area += a.pred_area
            total.gt_dice_sum += a.gt_dice_sum
            total.pred_dice_sum += a.pred_dice_sum
            total.gt_haus_sum += a.gt_haus_sum
            total.pred_haus_sum += a.pred_haus_sum
        f1 = _f1_from_counts(total.tp, total.fp, total.fn).f1
        return MetricsReport(f1, _dice_from_acc(total), _haus_from_acc(total), mode, list(per_image))
    if mode == "per_image":
        weights = np.array([ev.n_pixels for ev in per_image], dtype=np.float64)
        weights /= weights.sum()
        f1 = float(np.dot(weights, [ev.counts.f1 for ev in per_image]))
        dice = float(np.dot(weights, [ev.dice for ev in per_image]))
        haus = float(np.dot(weights, [ev.hausdorff for ev in per_image]))
        return MetricsReport(f1, dice, haus, mode, list(per_image))
    raise ValueError(f"unknown aggregation mode {mode!r}")


def write_report(report: MetricsReport, path) -> Path:
    path = Path(path)
    report.write_csv(path)
    return path
