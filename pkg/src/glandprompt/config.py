"""Run configuration: defaults, JSON overrides, and derived artifact paths.

A run is fully determined by one config file plus the seed. Environment
variables GLANDPROMPT_DATA_ROOT and GLANDPROMPT_WORK_DIR override the two
paths (and nothing else).
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from glandprompt.classifier import ClassifierConfig
from glandprompt.segmenter import SegmenterConfig
from glandprompt.synthetic import SynthSpec
from glandprompt.training import StageConfig, TrainingStage

ENV_DATA_ROOT = "GLANDPROMPT_DATA_ROOT"
ENV_WORK_DIR = "GLANDPROMPT_WORK_DIR"

DEFAULTS: dict = {
    "run_id": "run0",
    "seed": 7,
    "paths": {
        "data_root": "data/synthetic",
        "work_dir": "work",
    },
    "dataset": {
        "patch_size": 400,
        "dilate_radius": 2,
        "erode_radius": 2,
        "w0": 10.0,
        "sigma": 5.0,
        "normalize_mean": [0.89, 0.85, 0.9],
        "normalize_std": [0.08, 0.1, 0.07],
    },
    "synthetic": {
        "n_train": 40,
        "n_test_a": 10,
        "n_test_b": 0,
        "canvas": 500,
        "min_glands": 2,
        "max_glands": 5,
        "axis_min": 45,
        "axis_max": 85,
    },
    "classifier": {
        "image_size": 400,
        "token_patch_size": 16,
        "embed_dim": 192,
        "depth": 6,
        "heads": 3,
        "mlp_ratio": 4.0,
        "dropout": 0.0,
        "epochs": 3,
        "lr": 1e-4,
        "batch_size": 8,
        "val_fraction": 0.2,
    },
    "cam": {
        "target": "predicted",  # or "true": use the annotated grade for the CAM pass
        "batch_size": 8,
    },
    "segmenter": {
        "image_size": 400,
        "encoder_patch": 16,
        "encoder_dim": 128,
        "encoder_depth": 4,
        "encoder_heads": 4,
        "embed_dim": 128,
        "decoder_depth": 2,
        "decoder_heads": 4,
        "mlp_ratio": 4.0,
        "adapter_mid_channels": 8,
        "adapter_kernel_size": 3,
    },
    "training": {
        "gland": {"epochs": 2, "lr": 1e-4, "batch_size": 4},
        "contour": {"epochs": 1, "lr": 1e-4, "batch_size": 4},
        "use_weight_map": True,
    },
    "postprocess": {
        "threshold": 0.5,
        "median_radius": 2,
        "min_object_px": 500,
        "max_hole_px": 200,
    },
    "metrics": {
        "mode": "pooled",
        "hausdorff_penalty": None,
    },
}


class ConfigError(RuntimeError):
    pass


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            out[key] = _deep_merge(base[key], value, where)
        else:
            out[key] = value
    return out


class RunConfig:
    def __init__(self, data: dict):
        self.data = data

    @classmethod
    def load(cls, path=None, seed: int | None = None) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file {path} does not exist")
            with open(path) as fh:
                data = _deep_merge(data, json.load(fh))
        if os.environ.get(ENV_DATA_ROOT):
            data["paths"]["data_root"] = os.environ[ENV_DATA_ROOT]
        if os.environ.get(ENV_WORK_DIR):
            data["paths"]["work_dir"] = os.environ[ENV_WORK_DIR]
        if seed is not None:
            data["seed"] = int(seed)
        return cls(data)

    # paths ------------------------------------------------------------
    @property
    def run_id(self) -> str:
        return self.data["run_id"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def data_root(self) -> Path:
        return Path(self.data["paths"]["data_root"])

    @property
    def work_dir(self) -> Path:
        return Path(self.data["paths"]["work_dir"])

    @property
    def run_dir(self) -> Path:
        return self.work_dir / self.run_id

    def patches_dir(self, split: str) -> Path:
        return self.run_dir / "patches" / split

    def patch_manifest(self, split: str) -> Path:
        return self.patches_dir(split) / "patches.csv"

    def heatmaps_dir(self, split: str) -> Path:
        return self.run_dir / "heatmaps" / split

    @property
    def checkpoints_dir(self) -> Path:
        return self.run_dir / "checkpoints"

    @property
    def classifier_checkpoint(self) -> Path:
        return self.checkpoints_dir / "classifier.json"

    def stage_checkpoint(self, stage: TrainingStage) -> Path:
        return self.checkpoints_dir / f"segmenter_{TrainingStage(stage).value}.json"

    def predictions_dir(self, split: str) -> Path:
        return self.run_dir / "predictions" / split

    @property
    def reports_dir(self) -> Path:
        return self.run_dir / "reports"

    @property
    def figures_dir(self) -> Path:
        return self.run_dir / "figures"

    # sections ----------------------------------------------------------
    @property
    def normalize(self) -> tuple[tuple, tuple]:
        d = self.data["dataset"]
        return tuple(d["normalize_mean"]), tuple(d["normalize_std"])

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(seed=self.seed, **self.data["synthetic"])

    def classifier_config(self) -> ClassifierConfig:
        c = self.data["classifier"]
        return ClassifierConfig(
            image_size=c["image_size"],
            token_patch_size=c["token_patch_size"],
            embed_dim=c["embed_dim"],
            depth=c["depth"],
            heads=c["heads"],
            mlp_ratio=c["mlp_ratio"],
            dropout=c["dropout"],
        )

    def segmenter_config(self) -> SegmenterConfig:
        return SegmenterConfig(**self.data["segmenter"])

    def stage_config(self, stage) -> StageConfig:
        stage = TrainingStage(stage)
        key = "gland" if stage == TrainingStage.GLAND else "contour"
        s = self.data["training"][key]
        return StageConfig(
            stage=stage,
            epochs=s["epochs"],
            lr=s["lr"],
            batch_size=s["batch_size"],
            seed=self.seed,
            use_weight_map=self.data["training"]["use_weight_map"],
        )

    @property
    def dataset_kwargs(self) -> dict:
        d = self.data["dataset"]
        return {
            "patch": d["patch_size"],
            "dilate_radius": d["dilate_radius"],
            "erode_radius": d["erode_radius"],
            "w0": d["w0"],
            "sigma": d["sigma"],
        }

    @property
    def postprocess_kwargs(self) -> dict:
        p = self.data["postprocess"]
        return {
            "median_radius": p["median_radius"],
            "min_object_px": p["min_object_px"],
            "max_hole_px": p["max_hole_px"],
        }
