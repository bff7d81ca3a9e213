"""Grade-prompt heat maps from the classifier's activation grid.

The closed-form gradient-weighted CAM variant: with A the last-block token
grid and g the gradient of the target-class score w.r.t. A,

    alpha = g^2 / (2 g^2 + sum_ab(A) * g^3)     (zero where the denominator is 0)
    w_k   = sum_ij alpha * relu(g)
    L     = relu(sum_k w_k A_k)

L is bilinearly upsampled to the input resolution and min-max normalized to
[0, 1]; a constant map normalizes to all zeros.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from glandprompt.classifier import GradeClassifier
from glandprompt.dataset import GRADES


@dataclass
class HeatMap:
    values: np.ndarray  # (H, W) float32 in [0, 1]
    target_class: str
    source_image_id: str


def gradcam_pp_from_activations(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """Raw CAM map from an activation grid and its score gradient, both (C, h, w)."""
    a = np.asarray(activations, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    if a.shape != g.shape or a.ndim != 3:
        raise ValueError(f"activations {a.shape} and gradients {g.shape} must both be (C, h, w)")
    g2 = g * g
    denom = 2.0 * g2 + a.sum(axis=(1, 2), keepdims=True) * g2 * g
    alpha = np.divide(g2, denom, out=np.zeros_like(g2), where=denom != 0)
    weights = (alpha * np.maximum(g, 0.0)).sum(axis=(1, 2))
    return np.maximum((weights[:, None, None] * a).sum(axis=0), 0.0)


def minmax_normalize(raw: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant map (including all-zero) becomes all zeros."""
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        return np.zeros_like(raw, dtype=np.float32)
    return ((raw - lo) / (hi - lo)).astype(np.float32)


def gradcam_pp_batch(
    model: GradeClassifier,
    images: torch.Tensor,
    target_classes: list[int] | None = None,
) -> tuple[np.ndarray, list[int]]:
    """Heat maps for a normalized (B, 3, S, S) batch.

    target_classes defaults to the per-sample argmax prediction. Returns the
    (B, S, S) float32 maps in [0, 1] and the class indices used.
    """
    was_training = model.training
    model.eval()
    try:
        logits, grid = model.forward_with_feature_grid(images)
        if target_classes is None:
            targets = logits.argmax(dim=1).tolist()
        else:
            targets = list(target_classes)
        score = logits[torch.arange(len(targets)), torch.tensor(targets)].sum()
        grads = torch.autograd.grad(score, grid, allow_unused=True)[0]
        if grads is None:
            grads = torch.zeros_like(grid)
    finally:
        model.train(was_training)

    a = grid.detach().numpy()
    g = grads.detach().numpy()
    raw = np.stack([gradcam_pp_from_activations(a[i], g[i]) for i in range(len(a))])
    size = images.shape[-1]
    up = F.interpolate(
        torch.from_numpy(raw)[:, None].float(), size=(size, size),
        mode="bilinear", align_corners=False,
    )[:, 0].numpy()
    return np.stack([minmax_normalize(m) for m in up]), targets


def gradcam_pp(
    model: GradeClassifier,
    image: torch.Tensor,
    target_class: int | None = None,
    source_image_id: str = "",
) -> HeatMap:
    """Heat map for one normalized (3, S, S) image."""
    targets = None if target_class is None else [int(target_class)]
    maps, used = gradcam_pp_batch(model, image[None], targets)
    return HeatMap(values=maps[0], target_class=GRADES[used[0]], source_image_id=source_image_id)


class HeatMapStore:
    """Disk cache of per-patch heat maps keyed by (source_id, offset, rotation)."""

    MANIFEST = "heatmaps.json"

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._index: dict[str, dict] = {}
        manifest = self.directory / self.MANIFEST
        if manifest.exists():
            with open(manifest) as fh:
                self._index = json.load(fh)

    @staticmethod
    def key(source_id: str, offset: tuple[int, int], rotation: int) -> str:
        return f"{source_id}_r{offset[0]:05d}c{offset[1]:05d}k{rotation}"

    def __len__(self) -> int:
        return len(self._index)

    def has(self, source_id, offset, rotation) -> bool:
        return self.key(source_id, offset, rotation) in self._index

    def save(self, source_id, offset, rotation, values: np.ndarray, target_class: str):
        key = self.key(source_id, offset, rotation)
        np.save(self.directory / f"{key}.npy", values.astype(np.float32))
        self._index[key] = {"file": f"{key}.npy", "target_class": target_class}

    def load(self, source_id, offset, rotation) -> np.ndarray:
        key = self.key(source_id, offset, rotation)
        if key not in self._index:
            raise KeyError(f"no cached heat map for {key}")
        return np.load(self.directory / self._index[key]["file"])

    def flush(self):
        with open(self.directory / self.MANIFEST, "w") as fh:
            json.dump(self._index, fh, indent=1, sort_keys=True)
