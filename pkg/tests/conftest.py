"""Shared fixtures: a tiny synthetic dataset and models trained on it once."""

from __future__ import annotations

import imageio.v3 as iio
import numpy as np
import pytest
import torch

from glandprompt.classifier import ClassifierConfig, train_classifier
from glandprompt.dataset import load_glas_dataset, prepare_patches, read_patch_manifest
from glandprompt.cam import HeatMapStore
from glandprompt.segmenter import SegmenterConfig
from glandprompt.synthetic import SynthSpec, generate

TOY_SPEC = SynthSpec(
    n_train=10, n_test_a=2, n_test_b=0, canvas=96,
    min_glands=1, max_glands=3, axis_min=11, axis_max=17, margin=4, seed=5,
)
TOY_PATCH = 64
TOY_MEAN = (0.89, 0.85, 0.90)
TOY_STD = (0.08, 0.10, 0.07)

TOY_CLS_CONFIG = ClassifierConfig(
    image_size=64, token_patch_size=8, embed_dim=64, depth=2, heads=4,
)

TOY_SEG_CONFIG = SegmenterConfig(
    image_size=64, encoder_patch=8, encoder_dim=32, encoder_depth=1, encoder_heads=4,
    embed_dim=32, decoder_depth=1, decoder_heads=4, adapter_mid_channels=4,
)


@pytest.fixture(scope="session")
def toy_data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy_data")
    generate(TOY_SPEC, out)
    return out


@pytest.fixture(scope="session")
def toy_records(toy_data_dir):
    return load_glas_dataset(toy_data_dir)


@pytest.fixture(scope="session")
def toy_manifest(toy_records, tmp_path_factory):
    out = tmp_path_factory.mktemp("toy_patches")
    return prepare_patches(
        toy_records["train"], out, patch=TOY_PATCH, dilate_radius=1, erode_radius=1,
        w0=10.0, sigma=5.0,
    )


@pytest.fixture(scope="session")
def toy_samples(toy_manifest):
    rows = read_patch_manifest(toy_manifest)
    base = toy_manifest.parent
    return [(iio.imread(base / r["image"]), r["grade"], r["source_id"]) for r in rows]


@pytest.fixture(scope="session")
def toy_classifier(toy_samples):
    """A grade classifier trained once on the toy patches, with its report."""
    model, report = train_classifier(
        toy_samples, TOY_CLS_CONFIG, epochs=6, lr=1e-3, batch_size=4,
        val_fraction=0.2, seed=5, mean=TOY_MEAN, std=TOY_STD,
    )
    model.eval()
    return model, report


@pytest.fixture(scope="session")
def toy_heatmap_store(toy_manifest, tmp_path_factory):
    """Deterministic pseudo heat maps (the gland masks) for training tests."""
    store = HeatMapStore(tmp_path_factory.mktemp("toy_heat"))
    base = toy_manifest.parent
    for r in read_patch_manifest(toy_manifest):
        heat = (iio.imread(base / r["gland"]) > 0).astype(np.float32)
        store.save(r["source_id"], (r["row"], r["col"]), r["rotation"], heat, r["grade"])
    store.flush()
    return store


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
