"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
Criterion 8 drives the full pipeline end to end on the default synthetic
dataset through the CLI and is the slow one (several minutes on 2 CPU cores).
"""

import json
import os
import time
from pathlib import Path

import imageio.v3 as iio
import numpy as np
import pytest
import torch
from click.testing import CliRunner

from glandprompt import kernels
from glandprompt.cam import HeatMapStore
from glandprompt.cli import main as cli_main
from glandprompt.config import RunConfig
from glandprompt.dataset import corner_offsets, load_glas_dataset, read_patch_manifest
from glandprompt.manifest import load_manifest
from glandprompt.metrics import aggregate, evaluate_image, object_dice, object_f1, object_hausdorff
from glandprompt.postprocess import clean, remove_contour_overlap, stitch_patches
from glandprompt.segmenter import GradePromptSegmenter
from glandprompt.training import weighted_mse

from conftest import TOY_SEG_CONFIG
from oracles import brute_object_metrics, brute_stitch, random_instance_map

REPO_ROOT = Path(__file__).resolve().parents[1]

SMOKE_CONFIG = {
    "run_id": "acceptance",
    "seed": 11,
    "classifier": {
        "token_patch_size": 16, "embed_dim": 96, "depth": 3, "heads": 4,
        "epochs": 2, "lr": 3e-4, "batch_size": 8, "val_fraction": 0.2,
    },
    "segmenter": {
        "encoder_dim": 96, "encoder_depth": 2, "encoder_heads": 4,
        "embed_dim": 96, "decoder_depth": 2, "decoder_heads": 4,
    },
    "training": {
        "gland": {"epochs": 2, "lr": 3e-4, "batch_size": 4},
        "contour": {"epochs": 1, "lr": 3e-4, "batch_size": 4},
    },
}


def announce(number, text):
    print(f"\nACCEPTANCE {number}: PASS - {text}")


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    """Full pipeline on the default synthetic dataset, via the CLI."""
    root = tmp_path_factory.mktemp("smoke")
    config = dict(SMOKE_CONFIG)
    config["paths"] = {"data_root": str(root / "data"), "work_dir": str(root / "work")}
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config))

    runner = CliRunner()
    started = time.perf_counter()
    steps = [
        ["generate-data"],
        ["prepare"],
        ["train-classifier"],
        ["heatmaps", "--split", "train"],
        ["heatmaps", "--split", "testA"],
        ["train-seg", "--stage", "gland"],
        ["train-seg", "--stage", "contour"],
        ["predict", "--split", "testA"],
        ["evaluate", "--split", "testA"],
        ["plot", "--split", "testA"],
    ]
    for step in steps:
        result = runner.invoke(cli_main, step + ["--config", str(config_path)],
                               catch_exceptions=False)
        assert result.exit_code == 0, f"{step} failed:\n{result.output}"
    elapsed = time.perf_counter() - started
    cfg = RunConfig.load(config_path)
    for figure in ("heatmaps.png", "overlap_removal.png", "predictions.png"):
        assert (cfg.figures_dir / figure).exists()
    return {"config": cfg, "elapsed": elapsed}


def test_criterion_1_metric_oracle_equivalence():
    rng = np.random.default_rng(20240817)
    started = time.perf_counter()
    for _ in range(100):
        pred = random_instance_map(rng, size=int(rng.integers(8, 33)), max_objects=5)
        gt = random_instance_map(rng, size=pred.shape[0], max_objects=5)
        tp, fp, fn, f1, dice, haus = brute_object_metrics(pred, gt)
        res = object_f1(pred, gt)
        assert (res.tp, res.fp, res.fn) == (tp, fp, fn)
        assert object_dice(pred, gt) == pytest.approx(dice, abs=1e-9)
        assert object_hausdorff(pred, gt) == pytest.approx(haus, abs=0)
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"oracle comparison took {elapsed:.1f}s"
    announce(1, f"100 random instance-map pairs match the brute-force oracle "
                f"(F1 counts exact, Dice within 1e-9, Hausdorff exact) in {elapsed:.1f}s")


def test_criterion_2_known_value_fixtures():
    rng = np.random.default_rng(7)
    m = random_instance_map(rng, size=16, max_objects=4)
    assert object_f1(m, m).f1 == 1.0
    assert object_dice(m, m) == pytest.approx(1.0)
    assert object_hausdorff(m, m) == 0.0

    gt = np.zeros((10, 10), dtype=np.int32)
    gt[1:4, 1:4] = 1
    gt[6:9, 6:9] = 2
    pred = np.zeros_like(gt)
    pred[1:4, 1:4] = 1
    pred[6:9, 0:3] = 2
    res = object_f1(pred, gt)
    assert (res.precision, res.recall, res.f1) == (0.5, 0.5, 0.5)

    gt2 = np.zeros((12, 12), dtype=np.int32)
    gt2[2:6, 2:6] = 1
    shifted = np.zeros_like(gt2)
    shifted[2:6, 4:8] = 1
    assert object_dice(shifted, gt2) == pytest.approx(0.5, abs=0)
    announce(2, "pred==gt gives (1.0, 1.0, 0.0); hand-derived F1=0.5 and "
                "shifted-square Dice=0.5 fixtures pass exactly")


def test_criterion_3_weighted_mse_correctness():
    torch.manual_seed(0)
    pred = torch.rand(3, 7, 7)
    target = (torch.rand(3, 7, 7) > 0.5).float()
    assert torch.equal(weighted_mse(pred, target, torch.ones_like(pred)),
                       weighted_mse(pred, target))

    pred64 = torch.rand(4, 4, dtype=torch.float64, requires_grad=True)
    target64 = (torch.rand(4, 4) > 0.5).double()
    weight64 = torch.rand(4, 4, dtype=torch.float64) + 0.25
    loss = weighted_mse(pred64, target64, weight64)
    (grad,) = torch.autograd.grad(loss, pred64)
    flat = pred64.detach().reshape(-1)
    worst = 0.0
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + 1e-6
        hi = weighted_mse(pred64.detach(), target64, weight64).item()
        flat[i] = orig - 1e-6
        lo = weighted_mse(pred64.detach(), target64, weight64).item()
        flat[i] = orig
        fd = (hi - lo) / 2e-6
        an = grad.reshape(-1)[i].item()
        rel = abs(fd - an) / max(1.0, abs(fd))
        worst = max(worst, rel)
    assert worst <= 1e-4
    announce(3, f"all-ones weight map equals plain sum-of-squares exactly; "
                f"4x4 finite-difference gradient check worst rel err {worst:.2e} <= 1e-4")


def test_criterion_4_freezing_contract(smoke):
    cfg = smoke["config"]
    gland = load_manifest(cfg.stage_checkpoint("gland_stage"))
    contour = load_manifest(cfg.stage_checkpoint("contour_stage"))
    frozen_groups = ("image_encoder.", "adapter.", "gland_prompt_encoder.", "gland_decoder.")
    checked = 0
    for entry in gland.entries:
        name = entry["name"]
        if name.startswith(frozen_groups):
            assert np.array_equal(gland.array(name), contour.array(name)), name
            checked += 1
    assert checked > 0
    changed = sum(
        1 for e in contour.entries
        if e["name"].startswith(("contour_decoder.", "contour_prompt_encoder."))
        and not np.array_equal(gland.array(e["name"]), contour.array(e["name"]))
    )
    assert changed > 0
    announce(4, f"{checked} image-encoder/adapter/gland-branch tensors bitwise identical "
                f"across contour_stage; {changed} contour-branch tensors trained")


def test_criterion_5_architecture_contracts():
    torch.manual_seed(0)
    model = GradePromptSegmenter(TOY_SEG_CONFIG).eval()
    g = torch.Generator().manual_seed(1)
    image = torch.rand(1, 3, 64, 64, generator=g)
    h1 = torch.rand(1, 1, 64, 64, generator=g)
    h2 = torch.rand(1, 1, 64, 64, generator=g)

    with torch.no_grad():
        out1 = model(image, h1)
        out2 = model(image, h2)
    assert torch.equal(out1.contour_prob, out2.contour_prob)

    with torch.no_grad():
        for p in model.adapter.parameters():
            p.zero_()
        assert torch.equal(model.adapter(h1, image), h1)

    model.image_encoder.eval_count = 0
    with torch.no_grad():
        model(image, h1)
    assert model.image_encoder.eval_count == 1
    announce(5, "contour output bitwise independent of the heat map; zero-weight "
                "adapter is the identity; exactly one encoder evaluation per forward")


def test_criterion_6_postprocess_properties(rng):
    # overlap removal is contained in the gland mask
    for _ in range(20):
        gland = rng.random((20, 20)) < 0.5
        contour = rng.random((20, 20)) < 0.3
        out = remove_contour_overlap(gland, contour)
        assert not (out & ~gland).any()

    # clean (excluding the median step) is idempotent
    for _ in range(10):
        mask = rng.random((48, 48)) < 0.45
        once = clean(mask, median_radius=0, min_object_px=15, max_hole_px=10)
        twice = clean(once > 0, median_radius=0, min_object_px=15, max_hole_px=10)
        assert np.array_equal(once, twice)

    # stitching equals the per-pixel mean oracle on four-corner coverage of 500x500
    patches = [rng.random((400, 400)) for _ in range(4)]
    offsets = corner_offsets(500, 500, 400)
    assert np.allclose(stitch_patches(patches, offsets, 500, 500),
                       brute_stitch(patches, offsets, 500, 500))

    # bridged glands split into two components after contour subtraction
    gland = np.zeros((12, 22), dtype=bool)
    gland[3:9, 2:9] = True
    gland[3:9, 13:20] = True
    gland[5:7, 9:13] = True
    contour = np.zeros_like(gland)
    contour[:, 9:13] = True
    assert kernels.label_components(gland, 8)[1] == 1
    removed = remove_contour_overlap(gland, contour)
    assert kernels.label_components(removed, 8)[1] == 2
    announce(6, "overlap removal contained in gland; clean idempotent (excl. median); "
                "stitching matches the mean oracle on 500x500; bridged glands split in two")


def test_criterion_7_data_pipeline_counts(smoke):
    cfg = smoke["config"]
    splits = load_glas_dataset(cfg.data_root)
    grades = {r.id: r.grade for s in splits.values() for r in s}
    assert len(splits["train"]) == 40 and len(splits["testA"]) == 10
    assert len(read_patch_manifest(cfg.patch_manifest("train"))) == 40 * 4 * 4
    # round trip: regenerate into a fresh directory and compare
    from glandprompt.synthetic import generate

    spec = cfg.synth_spec()
    again_dir = cfg.work_dir / "roundtrip"
    generate(spec, again_dir)
    again = load_glas_dataset(again_dir)
    assert {r.id for r in again["train"]} == {r.id for r in splits["train"]}
    assert all(grades[r.id] == r.grade for s in again.values() for r in s)

    glas_root = os.environ.get("GLANDPROMPT_GLAS_ROOT")
    note = "real GlaS not supplied (set GLANDPROMPT_GLAS_ROOT to verify 85/60/20 and 1360)"
    if glas_root:
        real = load_glas_dataset(glas_root, min_size=400)
        assert (len(real["train"]), len(real["testA"]), len(real["testB"])) == (85, 60, 20)
        assert len(real["train"]) * 16 == 1360
        note = "real GlaS counts verified: 85/60/20 records, 1360 training patches"
    announce(7, f"synthetic generate->load round trip exact (40/10 records, 640 patches); {note}")


def test_criterion_8_end_to_end_smoke(smoke):
    cfg = smoke["config"]
    assert smoke["elapsed"] <= 1200, f"pipeline took {smoke['elapsed']:.0f}s > 20 min"

    report = json.loads((cfg.checkpoints_dir / "classifier_report.json").read_text())
    assert report["val_accuracy"] >= 0.9

    records = {r.id: r for r in load_glas_dataset(cfg.data_root)["testA"]}
    per_image = []
    for image_id, record in records.items():
        pred = iio.imread(cfg.predictions_dir("testA") / f"{image_id}_pred.png").astype(np.int32)
        per_image.append(evaluate_image(image_id, pred, record.annotation))
    metrics_report = aggregate(per_image, mode="pooled")
    assert metrics_report.object_dice >= 0.7

    # heat maps score higher inside gland regions on >= 80% of validation images
    store = HeatMapStore(cfg.heatmaps_dir("train"))
    rows = read_patch_manifest(cfg.patch_manifest("train"))
    val_ids = set(report["val_ids"])
    patches_dir = cfg.patches_dir("train")
    per_val_image = {}
    for row in rows:
        if row["source_id"] not in val_ids:
            continue
        gland = iio.imread(patches_dir / row["gland"]) > 0
        if not gland.any() or gland.all():
            continue
        heat = store.load(row["source_id"], (row["row"], row["col"]), row["rotation"])
        acc = per_val_image.setdefault(row["source_id"], [0.0, 0.0])
        acc[0] += float(heat[gland].mean())
        acc[1] += float(heat[~gland].mean())
    wins = sum(1 for inside, outside in per_val_image.values() if inside > outside)
    fraction = wins / len(per_val_image)
    assert fraction >= 0.8
    announce(8, f"pipeline {smoke['elapsed']:.0f}s (<= 20 min); classifier val accuracy "
                f"{report['val_accuracy']:.3f} >= 0.9; object Dice "
                f"{metrics_report.object_dice:.3f} >= 0.7; heat maps localize on "
                f"{wins}/{len(per_val_image)} validation images (>= 80%)")


def test_criterion_9_full_scale_targets_documented_not_asserted():
    readme = (REPO_ROOT / "README.md").read_text()
    for target in ("0.929", "0.921", "41.189", "97.1", "98.7"):
        assert target in readme, f"documented full-scale target {target} missing from README"
    lowered = readme.lower()
    assert "not reproduc" in lowered or "cannot be reproduced" in lowered
    announce(9, "full-scale accuracy/metric targets are documented in the README as "
                "requiring pretrained weights, licensed data and GPU training; they are "
                "never asserted in CI")
