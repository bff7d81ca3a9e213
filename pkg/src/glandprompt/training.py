"""Weighted-MSE objective and the staged training schedule.

Stage 1 (gland_stage) trains the shared image encoder, the gland prompt
encoder, the prompt adapter and the gland decoder. Stage 2 (contour_stage)
trains only the contour prompt encoder and decoder; everything else -
including normalization statistics - is fully frozen and must come out
bitwise identical to the gland-stage checkpoint.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import imageio.v3 as iio
import numpy as np
import torch

from glandprompt.cam import HeatMapStore
from glandprompt.classifier import DEFAULT_MEAN, DEFAULT_STD, normalize_image
from glandprompt.dataset import read_patch_manifest
from glandprompt.manifest import LoadReport, apply_manifest, load_manifest, save_manifest
from glandprompt.segmenter import _PROB_EPS, GradePromptSegmenter


class TrainingStage(str, Enum):
    GLAND = "gland_stage"
    CONTOUR = "contour_stage"


STAGE_TRAINABLE = {
    TrainingStage.GLAND: frozenset(
        {"image_encoder", "gland_prompt_encoder", "adapter", "gland_decoder"}
    ),
    TrainingStage.CONTOUR: frozenset({"contour_prompt_encoder", "contour_decoder"}),
}


class StageOrderError(RuntimeError):
    pass


@dataclass
class StageConfig:
    stage: TrainingStage
    epochs: int = 2
    lr: float = 1e-4
    batch_size: int = 4
    seed: int = 0
    use_weight_map: bool = True  # False reproduces the plain-MSE baseline path

    def __post_init__(self):
        self.stage = TrainingStage(self.stage)

    @property
    def trainable_groups(self) -> frozenset[str]:
        return STAGE_TRAINABLE[self.stage]


def weighted_mse(pred: torch.Tensor, target: torch.Tensor,
                 weight_map: torch.Tensor | None = None) -> torch.Tensor:
    """Per-pixel weighted squared error, summed over pixels, averaged over batch.

    weight_map=None uses uniform weight 1 (the plain sum-of-squares baseline).
    """
    if pred.shape != target.shape:
        raise ValueError(f"pred {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if weight_map is None:
        weighted = (pred - target) ** 2
    else:
        if weight_map.shape != pred.shape:
            raise ValueError(
                f"weight map {tuple(weight_map.shape)} does not match pred {tuple(pred.shape)}"
            )
        if bool((weight_map < 0).any()):
            raise ValueError("weight map contains negative weights")
        weighted = weight_map * (pred - target) ** 2
    if pred.ndim == 2:
        return weighted.sum()
    return weighted.flatten(1).sum(dim=1).mean()


class SegmentationData:
    """Patch manifest + cached heat maps, served as batched tensors.

    Raw patch images are cached as uint8; masks, weight maps and heat maps
    load lazily per batch.
    """

    def __init__(self, manifest_path, heatmap_store: HeatMapStore,
                 mean=DEFAULT_MEAN, std=DEFAULT_STD):
        self.base = Path(manifest_path).parent
        self.rows = read_patch_manifest(manifest_path)
        self.store = heatmap_store
        self.mean, self.std = mean, std
        self._image_cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.rows)

    def missing_heatmaps(self) -> list[str]:
        return [
            HeatMapStore.key(r["source_id"], (r["row"], r["col"]), r["rotation"])
            for r in self.rows
            if not self.store.has(r["source_id"], (r["row"], r["col"]), r["rotation"])
        ]

    def _image(self, idx: int) -> np.ndarray:
        if idx not in self._image_cache:
            self._image_cache[idx] = iio.imread(self.base / self.rows[idx]["image"])
        return self._image_cache[idx]

    def batch(self, indices) -> dict[str, torch.Tensor]:
        images, heatmaps, glands, contours, weights = [], [], [], [], []
        for idx in indices:
            row = self.rows[idx]
            images.append(normalize_image(self._image(idx), self.mean, self.std))
            heatmaps.append(torch.from_numpy(
                self.store.load(row["source_id"], (row["row"], row["col"]), row["rotation"])
            ))
            glands.append(torch.from_numpy(
                (iio.imread(self.base / row["gland"]) > 0).astype(np.float32)))
            contours.append(torch.from_numpy(
                (iio.imread(self.base / row["contour"]) > 0).astype(np.float32)))
            weights.append(torch.from_numpy(np.load(self.base / row["weight"]).astype(np.float32)))
        return {
            "image": torch.stack(images),
            "heatmap": torch.stack(heatmaps)[:, None].float(),
            "gland": torch.stack(glands),
            "contour": torch.stack(contours),
            "weight": torch.stack(weights),
        }


def _set_stage_mode(model: GradePromptSegmenter, trainable: frozenset[str]):
    for name, module in model.parameter_groups().items():
        is_trainable = name in trainable
        module.requires_grad_(is_trainable)
        module.train(is_trainable)  # frozen modules keep eval-mode statistics


def stage_loss(model: GradePromptSegmenter, stage: TrainingStage,
               batch: dict[str, torch.Tensor], use_weight_map: bool = True) -> torch.Tensor:
    weight = batch["weight"] if use_weight_map else None
    if stage == TrainingStage.GLAND:
        embedding = model.encode_image(batch["image"])
        logits = model.gland_logits(embedding, batch["image"], batch["heatmap"])
        pred = torch.sigmoid(logits).clamp(_PROB_EPS, 1.0 - _PROB_EPS)
        return weighted_mse(pred, batch["gland"], weight)
    with torch.no_grad():  # encoder frozen in contour stage
        embedding = model.encode_image(batch["image"])
    logits = model.contour_logits(embedding)
    pred = torch.sigmoid(logits).clamp(_PROB_EPS, 1.0 - _PROB_EPS)
    return weighted_mse(pred, batch["contour"], weight)


def run_stage(
    model: GradePromptSegmenter,
    stage_config: StageConfig,
    data: SegmentationData,
    out_dir,
    prior_checkpoint=None,
    log=None,
    extra_metadata: dict | None = None,
) -> tuple[Path, list[dict]]:
    """Train one stage and write its checkpoint manifest and loss curve CSV.

    contour_stage requires prior_checkpoint to be a gland_stage manifest; it
    is loaded strictly before training. A prior checkpoint passed to
    gland_stage is applied permissively (pretrained initialization).
    """
    stage = stage_config.stage
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if stage == TrainingStage.CONTOUR:
        if prior_checkpoint is None:
            raise StageOrderError(
                "contour_stage requires the gland_stage checkpoint; run gland_stage first"
            )
        prior = load_manifest(prior_checkpoint)
        if prior.metadata.get("stage") != TrainingStage.GLAND.value:
            raise StageOrderError(
                f"checkpoint {prior.path} has stage {prior.metadata.get('stage')!r}, "
                f"expected {TrainingStage.GLAND.value!r}"
            )
        apply_manifest(model, prior, mode="strict")
    elif prior_checkpoint is not None:
        apply_manifest(model, load_manifest(prior_checkpoint), mode="permissive")

    if len(data) == 0:
        raise ValueError("no training patches")
    missing = data.missing_heatmaps()
    if missing:
        raise ValueError(
            f"{len(missing)} patches have no cached heat map (first: {missing[0]}); "
            "compute heat maps first"
        )

    torch.manual_seed(stage_config.seed)
    _set_stage_mode(model, stage_config.trainable_groups)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=stage_config.lr)
    steps_per_epoch = (len(data) + stage_config.batch_size - 1) // stage_config.batch_size
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=max(1, stage_config.epochs * steps_per_epoch)
    )
    shuffler = torch.Generator().manual_seed(stage_config.seed)

    curve = []
    step = 0
    for epoch in range(stage_config.epochs):
        order = torch.randperm(len(data), generator=shuffler).tolist()
        for i in range(0, len(order), stage_config.batch_size):
            batch = data.batch(order[i:i + stage_config.batch_size])
            loss = stage_loss(model, stage, batch, stage_config.use_weight_map)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            curve.append({"epoch": epoch, "step": step, "loss": loss.item()})
            step += 1
        if log:
            epoch_rows = [r for r in curve if r["epoch"] == epoch]
            log(f"{stage.value} epoch {epoch}: "
                f"mean loss {sum(r['loss'] for r in epoch_rows) / len(epoch_rows):.2f}")

    curve_path = out_dir / f"curve_{stage.value}.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "step", "loss"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(curve)

    metadata = {
        "stage": stage.value,
        "seed": stage_config.seed,
        "epochs": stage_config.epochs,
        "lr": stage_config.lr,
        "batch_size": stage_config.batch_size,
    }
    metadata.update(extra_metadata or {})
    checkpoint = save_manifest(model, out_dir / f"segmenter_{stage.value}.json", metadata)
    model.eval()
    model.requires_grad_(True)
    return checkpoint, curve


def load_pretrained(
    model: GradePromptSegmenter,
    manifest_path,
    mode: str = "permissive",
    duplicate_gland_to_contour: bool = False,
) -> LoadReport:
    """Initialize a segmenter from a weight manifest.

    duplicate_gland_to_contour also maps gland-branch decoder and prompt
    encoder entries onto the contour branch, mirroring a single-branch source
    checkpoint into both pairs.
    """
    remap = None
    if duplicate_gland_to_contour:
        remap = [
            ("gland_decoder.", "contour_decoder."),
            ("gland_prompt_encoder.", "contour_prompt_encoder."),
        ]
    return apply_manifest(model, load_manifest(manifest_path), mode=mode, remap=remap)
