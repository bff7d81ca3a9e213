"""Command-line pipeline: generate-data, prepare, train-classifier, heatmaps,
train-seg, predict, evaluate, plot.

Every command is driven by one config file plus the seed; artifacts land
under <work_dir>/<run_id>/{patches,heatmaps,checkpoints,predictions,reports,
figures}. Commands refuse to overwrite existing primary artifacts unless
--force is passed, and re-running with identical config and seed reproduces
identical outputs.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import click
import imageio.v3 as iio
import numpy as np
import torch

from glandprompt import dataset as ds
from glandprompt import figures, metrics, postprocess, synthetic
from glandprompt.cam import HeatMapStore, gradcam_pp_batch
from glandprompt.classifier import GradeClassifier, normalize_image, train_classifier
from glandprompt.config import ConfigError, RunConfig
from glandprompt.manifest import ManifestError, apply_manifest, load_manifest, save_manifest
from glandprompt.segmenter import GradePromptSegmenter
from glandprompt.training import (
    SegmentationData,
    StageOrderError,
    TrainingStage,
    run_stage,
)

SPLIT_CHOICES = click.Choice(["train", "testA", "testB"])


def _config(path, seed) -> RunConfig:
    try:
        return RunConfig.load(path, seed)
    except ConfigError as exc:
        raise click.ClickException(str(exc))


def _guard_overwrite(path: Path, force: bool):
    if path.exists() and not force:
        raise click.ClickException(f"{path} already exists; pass --force to overwrite")


def _require(path: Path, producer: str):
    if not path.exists():
        raise click.ClickException(f"missing {path}; run `glandprompt {producer}` first")


def _records(cfg: RunConfig, enforce_size: bool = True) -> dict:
    if not cfg.data_root.exists():
        raise click.ClickException(
            f"data root {cfg.data_root} does not exist; run `glandprompt generate-data` "
            "or point paths.data_root at a dataset"
        )
    try:
        return ds.load_glas_dataset(
            cfg.data_root, min_size=cfg.dataset_kwargs["patch"] if enforce_size else None
        )
    except ds.GlasDataError as exc:
        raise click.ClickException(str(exc))


def _load_classifier(cfg: RunConfig) -> GradeClassifier:
    _require(cfg.classifier_checkpoint, "train-classifier")
    manifest = load_manifest(cfg.classifier_checkpoint)
    from glandprompt.classifier import ClassifierConfig

    model = GradeClassifier(ClassifierConfig(**manifest.metadata["config"]))
    apply_manifest(model, manifest, mode="strict")
    model.eval()
    return model


def _load_segmenter(cfg: RunConfig) -> GradePromptSegmenter:
    from glandprompt.segmenter import SegmenterConfig

    path = cfg.stage_checkpoint(TrainingStage.CONTOUR)
    _require(cfg.stage_checkpoint(TrainingStage.GLAND), "train-seg --stage gland")
    _require(path, "train-seg --stage contour")
    manifest = load_manifest(path)
    if manifest.metadata.get("stage") != TrainingStage.CONTOUR.value:
        raise click.ClickException(
            f"{path} is not a contour_stage checkpoint; run `glandprompt train-seg --stage contour`"
        )
    model = GradePromptSegmenter(SegmenterConfig(**manifest.metadata["segmenter_config"]))
    apply_manifest(model, manifest, mode="strict")
    model.eval()
    return model


config_option = click.option("--config", "config_path", type=click.Path(), default=None,
                             help="JSON config file overriding defaults.")
seed_option = click.option("--seed", type=int, default=None, help="Override the config seed.")
force_option = click.option("--force", is_flag=True, help="Overwrite existing artifacts.")


@click.group()
def main():
    """Grade-prompted gland segmentation pipeline."""


@main.command("generate-data")
@config_option
@seed_option
@force_option
def cmd_generate_data(config_path, seed, force):
    """Generate the synthetic dataset at paths.data_root."""
    cfg = _config(config_path, seed)
    _guard_overwrite(cfg.data_root / "grades.csv", force)
    try:
        out = synthetic.generate(cfg.synth_spec(), cfg.data_root)
    except synthetic.SynthesisError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"synthetic dataset written to {out}")


@main.command("prepare")
@config_option
@seed_option
@click.option("--split", type=click.Choice(["all", "train", "testA", "testB"]), default="all")
@force_option
def cmd_prepare(config_path, seed, split, force):
    """Extract corner/rotation patches with contour masks and weight maps."""
    cfg = _config(config_path, seed)
    records = _records(cfg)
    splits = ds.SPLITS if split == "all" else (split,)
    for name in splits:
        if split != "all" and not records[name]:
            raise click.ClickException(f"split {name} has no records in {cfg.data_root}")
        manifest = cfg.patch_manifest(name)
        _guard_overwrite(manifest, force)
        out = ds.prepare_patches(records[name], cfg.patches_dir(name), **cfg.dataset_kwargs)
        click.echo(f"{name}: {len(records[name])} records -> "
                   f"{len(ds.read_patch_manifest(out))} patches ({out})")


@main.command("train-classifier")
@config_option
@seed_option
@force_option
def cmd_train_classifier(config_path, seed, force):
    """Train the grade classifier on the train-split patches."""
    cfg = _config(config_path, seed)
    _guard_overwrite(cfg.classifier_checkpoint, force)
    manifest_path = cfg.patch_manifest("train")
    _require(manifest_path, "prepare")
    rows = ds.read_patch_manifest(manifest_path)
    base = manifest_path.parent
    samples = [(iio.imread(base / r["image"]), r["grade"], r["source_id"]) for r in rows]
    c = cfg.data["classifier"]
    mean, std = cfg.normalize
    model, report = train_classifier(
        samples,
        cfg.classifier_config(),
        epochs=c["epochs"],
        lr=c["lr"],
        batch_size=c["batch_size"],
        val_fraction=c["val_fraction"],
        seed=cfg.seed,
        mean=mean,
        std=std,
        log=click.echo,
    )
    save_manifest(model, cfg.classifier_checkpoint, metadata={
        "kind": "classifier",
        "config": dataclasses.asdict(model.config),
        "mean": list(mean),
        "std": list(std),
        "val_accuracy": report.val_accuracy,
        "train_accuracy": report.train_accuracy,
    })
    report_path = cfg.checkpoints_dir / "classifier_report.json"
    with open(report_path, "w") as fh:
        json.dump(dataclasses.asdict(report), fh, indent=1, sort_keys=True)
    click.echo(f"train accuracy {report.train_accuracy:.3f}, "
               f"val accuracy {report.val_accuracy:.3f} -> {cfg.classifier_checkpoint}")


@main.command("heatmaps")
@config_option
@seed_option
@click.option("--split", type=SPLIT_CHOICES, default="train")
@force_option
def cmd_heatmaps(config_path, seed, split, force):
    """Compute and cache classifier heat maps for every patch of a split."""
    cfg = _config(config_path, seed)
    manifest_path = cfg.patch_manifest(split)
    _require(manifest_path, "prepare")
    store_manifest = cfg.heatmaps_dir(split) / HeatMapStore.MANIFEST
    _guard_overwrite(store_manifest, force)

    model = _load_classifier(cfg)
    mean, std = cfg.normalize
    rows = ds.read_patch_manifest(manifest_path)
    store = HeatMapStore(cfg.heatmaps_dir(split))
    base = manifest_path.parent
    use_true = cfg.data["cam"]["target"] == "true"
    batch_size = cfg.data["cam"]["batch_size"]
    for i in range(0, len(rows), batch_size):
        chunk = rows[i:i + batch_size]
        images = torch.stack(
            [normalize_image(iio.imread(base / r["image"]), mean, std) for r in chunk]
        )
        targets = [ds.GRADES.index(r["grade"]) for r in chunk] if use_true else None
        maps, used = gradcam_pp_batch(model, images, targets)
        for r, heat, cls in zip(chunk, maps, used):
            store.save(r["source_id"], (r["row"], r["col"]), r["rotation"],
                       heat, ds.GRADES[cls])
    store.flush()
    click.echo(f"{len(rows)} heat maps cached in {cfg.heatmaps_dir(split)}")


@main.command("train-seg")
@config_option
@seed_option
@click.option("--stage", type=click.Choice(["gland", "contour"]), required=True)
@click.option("--pretrained", type=click.Path(exists=True), default=None,
              help="Weight manifest to initialize from (gland stage only).")
@click.option("--strict-weights", is_flag=True,
              help="Require the pretrained manifest to cover every parameter.")
@force_option
def cmd_train_seg(config_path, seed, stage, pretrained, strict_weights, force):
    """Train one segmentation stage (gland first, then contour)."""
    cfg = _config(config_path, seed)
    stage = TrainingStage.GLAND if stage == "gland" else TrainingStage.CONTOUR
    _guard_overwrite(cfg.stage_checkpoint(stage), force)
    manifest_path = cfg.patch_manifest("train")
    _require(manifest_path, "prepare")
    store_manifest = cfg.heatmaps_dir("train") / HeatMapStore.MANIFEST
    _require(store_manifest, "heatmaps --split train")

    mean, std = cfg.normalize
    data = SegmentationData(manifest_path, HeatMapStore(cfg.heatmaps_dir("train")), mean, std)
    model = GradePromptSegmenter(cfg.segmenter_config())
    torch.manual_seed(cfg.seed)  # deterministic initialization before any loading

    if stage == TrainingStage.CONTOUR:
        prior = cfg.stage_checkpoint(TrainingStage.GLAND)
        _require(prior, "train-seg --stage gland")
    else:
        prior = pretrained
        if prior is not None and strict_weights:
            apply_manifest(model, load_manifest(prior), mode="strict")
            prior = None
    try:
        checkpoint, curve = run_stage(
            model, cfg.stage_config(stage), data, cfg.checkpoints_dir,
            prior_checkpoint=prior, log=click.echo,
            extra_metadata={"segmenter_config": dataclasses.asdict(model.config)},
        )
    except (StageOrderError, ManifestError, ValueError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"{stage.value} done: {len(curve)} steps -> {checkpoint}")


@main.command("predict")
@config_option
@seed_option
@click.option("--split", type=SPLIT_CHOICES, default="testA")
@force_option
def cmd_predict(config_path, seed, split, force):
    """Stitch per-patch predictions into instance masks for a split."""
    cfg = _config(config_path, seed)
    out_dir = cfg.predictions_dir(split)
    _guard_overwrite(out_dir / "done.json", force)
    store_manifest = cfg.heatmaps_dir(split) / HeatMapStore.MANIFEST
    _require(store_manifest, f"heatmaps --split {split}")

    model = _load_segmenter(cfg)
    store = HeatMapStore(cfg.heatmaps_dir(split))
    records = _records(cfg)[split]
    if not records:
        raise click.ClickException(f"split {split} has no records in {cfg.data_root}")

    mean, std = cfg.normalize
    patch = cfg.dataset_kwargs["patch"]
    threshold = cfg.data["postprocess"]["threshold"]
    out_dir.mkdir(parents=True, exist_ok=True)
    done = []
    for record in records:
        H, W = record.annotation.shape
        offsets = ds.corner_offsets(H, W, patch)
        images, heatmaps = [], []
        for r, c in offsets:
            crop = record.image[r:r + patch, c:c + patch]
            images.append(normalize_image(crop, mean, std))
            heatmaps.append(torch.from_numpy(store.load(record.id, (r, c), 0))[None])
        with torch.no_grad():
            out = model(torch.stack(images), torch.stack(heatmaps).float())
        gland_prob = postprocess.stitch_patches(out.gland_prob.numpy(), offsets, H, W)
        contour_prob = postprocess.stitch_patches(out.contour_prob.numpy(), offsets, H, W)
        gland = postprocess.binarize(gland_prob, threshold)
        contour = postprocess.binarize(contour_prob, threshold)
        removed = postprocess.remove_contour_overlap(gland, contour)
        labels = postprocess.clean(removed, **cfg.postprocess_kwargs)
        iio.imwrite(out_dir / f"{record.id}_pred.png", labels.astype(np.uint16))
        iio.imwrite(out_dir / f"{record.id}_gland.png", gland.astype(np.uint8) * 255)
        iio.imwrite(out_dir / f"{record.id}_contour.png", contour.astype(np.uint8) * 255)
        done.append(record.id)
        click.echo(f"{record.id}: {int(labels.max())} objects")
    with open(out_dir / "done.json", "w") as fh:
        json.dump({"split": split, "ids": done}, fh, indent=1, sort_keys=True)
    click.echo(f"{len(done)} predictions in {out_dir}")


@main.command("evaluate")
@config_option
@seed_option
@click.option("--split", type=SPLIT_CHOICES, default="testA")
@click.option("--mode", type=click.Choice(["pooled", "per_image"]), default=None,
              help="Aggregation mode (default from config).")
def cmd_evaluate(config_path, seed, split, mode):
    """Object-level F1 / Dice / Hausdorff for a predicted split."""
    cfg = _config(config_path, seed)
    pred_dir = cfg.predictions_dir(split)
    _require(pred_dir / "done.json", f"predict --split {split}")
    records = _records(cfg)[split]
    if not records:
        raise click.ClickException(f"split {split} has no records in {cfg.data_root}")
    mode = mode or cfg.data["metrics"]["mode"]
    penalty = cfg.data["metrics"]["hausdorff_penalty"]

    per_image = []
    for record in records:
        pred_path = pred_dir / f"{record.id}_pred.png"
        _require(pred_path, f"predict --split {split}")
        pred = iio.imread(pred_path).astype(np.int32)
        per_image.append(metrics.evaluate_image(record.id, pred, record.annotation, penalty))
    report = metrics.aggregate(per_image, mode=mode)
    cfg.reports_dir.mkdir(parents=True, exist_ok=True)
    csv_path = cfg.reports_dir / f"metrics_{split}_{mode}.csv"
    report.write_csv(csv_path)
    click.echo(report.format_table(title=f"split {split} ({mode})"))
    click.echo(f"report written to {csv_path}")


@main.command("plot")
@config_option
@seed_option
@click.option("--split", type=SPLIT_CHOICES, default="testA")
@click.option("--n-examples", type=int, default=4)
def cmd_plot(config_path, seed, split, n_examples):
    """Static overlay and heat-map figures for a predicted split."""
    cfg = _config(config_path, seed)
    cfg.figures_dir.mkdir(parents=True, exist_ok=True)

    # heat-map panel from the train cache
    manifest_path = cfg.patch_manifest("train")
    _require(manifest_path, "prepare")
    store_manifest = cfg.heatmaps_dir("train") / HeatMapStore.MANIFEST
    _require(store_manifest, "heatmaps --split train")
    store = HeatMapStore(cfg.heatmaps_dir("train"))
    rows = [r for r in ds.read_patch_manifest(manifest_path) if r["rotation"] == 0]
    entries = []
    for row in rows[:n_examples]:
        image = iio.imread(manifest_path.parent / row["image"])
        heat = store.load(row["source_id"], (row["row"], row["col"]), row["rotation"])
        entries.append((image, heat, f"{row['source_id']} ({row['grade']})"))
    heat_fig = figures.heatmap_panel(entries, cfg.figures_dir / "heatmaps.png")

    # overlap-removal strip and prediction grid from the predicted split
    pred_dir = cfg.predictions_dir(split)
    _require(pred_dir / "done.json", f"predict --split {split}")
    records = _records(cfg)[split]
    first = records[0]
    gland = iio.imread(pred_dir / f"{first.id}_gland.png") > 0
    contour = iio.imread(pred_dir / f"{first.id}_contour.png") > 0
    removed = postprocess.remove_contour_overlap(gland, contour)
    overlap_fig = figures.overlap_removal_panel(
        gland, contour, removed, cfg.figures_dir / "overlap_removal.png"
    )
    grid_entries = []
    for record in records[:n_examples]:
        pred = iio.imread(pred_dir / f"{record.id}_pred.png").astype(np.int32)
        grid_entries.append((record.image, record.annotation, pred, record.id))
    grid_fig = figures.prediction_grid(grid_entries, cfg.figures_dir / "predictions.png")
    click.echo(f"figures: {heat_fig}, {overlap_fig}, {grid_fig}")


if __name__ == "__main__":
    main()
