"""Portable weight manifests.

A manifest is a JSON file listing (parameter-name, shape, dtype, blob
reference) plus free-form metadata, with the blobs in a sibling .npz archive.
It is the checkpoint format for every model here and the import path for
externally pretrained weights. Loading is strict (every model parameter must
match, mismatches error listing offenders) or permissive (load what fits,
report the rest).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from glandprompt.layers import interpolate_token_grid

FORMAT = "weight-manifest/v1"


class ManifestError(RuntimeError):
    pass


@dataclass
class LoadReport:
    loaded: list[str] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)   # (model param, reason)
    missing: list[str] = field(default_factory=list)               # model params with no source
    unused: list[str] = field(default_factory=list)                # manifest entries never applied

    @property
    def fully_loaded(self) -> bool:
        return not self.skipped and not self.missing

    def summary(self) -> str:
        return (f"{len(self.loaded)} loaded, {len(self.skipped)} skipped, "
                f"{len(self.missing)} missing, {len(self.unused)} unused")


def save_manifest(module_or_state, path, metadata: dict | None = None) -> Path:
    """Write a model's parameters and buffers as <path>.json + <path>.npz."""
    if isinstance(module_or_state, torch.nn.Module):
        state = module_or_state.state_dict()
    else:
        state = dict(module_or_state)
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)

    arrays = {}
    entries = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
        arrays[name] = arr
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "blob": name,
        })
    np.savez(path.with_suffix(".npz"), **arrays)
    doc = {"format": FORMAT, "metadata": metadata or {}, "parameters": entries}
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return path.with_suffix(".json")


@dataclass
class Manifest:
    path: Path
    metadata: dict
    entries: list[dict]
    _arrays: dict

    def array(self, blob: str) -> np.ndarray:
        return self._arrays[blob]


def load_manifest(path) -> Manifest:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist")
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ManifestError(f"{path}: unsupported manifest format {doc.get('format')!r}")
    with np.load(path.with_suffix(".npz")) as npz:
        arrays = {k: npz[k] for k in npz.files}
    return Manifest(path, doc.get("metadata", {}), doc["parameters"], arrays)


def apply_manifest(
    model: torch.nn.Module,
    manifest: Manifest,
    mode: str = "strict",
    remap: list[tuple[str, str]] | None = None,
    interpolate_positional: bool = False,
) -> LoadReport:
    """Copy manifest arrays into a model.

    remap duplicates entries whose name starts with a source prefix onto the
    destination prefix (used to seed the contour branch from gland weights).
    With interpolate_positional, *pos_embed entries whose sizes disagree only
    in token count are resized between square grids instead of skipped.
    """
    if mode not in ("strict", "permissive"):
        raise ValueError(f"mode must be 'strict' or 'permissive', got {mode!r}")

    sources: dict[str, dict] = {}
    used = {e["name"]: False for e in manifest.entries}
    for entry in manifest.entries:
        sources.setdefault(entry["name"], entry)
    for src_prefix, dst_prefix in remap or []:
        for entry in manifest.entries:
            if entry["name"].startswith(src_prefix):
                dst = dst_prefix + entry["name"][len(src_prefix):]
                sources.setdefault(dst, entry)

    report = LoadReport()
    state = model.state_dict()
    new_state = {}
    for name, tensor in state.items():
        entry = sources.get(name)
        if entry is None:
            report.missing.append(name)
            continue
        arr = manifest.array(entry["blob"])
        if tuple(arr.shape) != tuple(tensor.shape):
            value = None
            if (
                interpolate_positional
                and name.endswith("pos_embed")
                and arr.ndim == 3 and tensor.ndim == 3
                and arr.shape[0] == 1 and arr.shape[2] == tensor.shape[2]
            ):
                try:
                    value = interpolate_token_grid(torch.from_numpy(arr.copy()), tensor.shape[1])
                except ValueError:
                    value = None
            if value is None:
                report.skipped.append(
                    (name, f"shape {list(arr.shape)} != expected {list(tensor.shape)}")
                )
                continue
            new_state[name] = value.to(tensor.dtype)
        else:
            new_state[name] = torch.from_numpy(arr.copy()).to(tensor.dtype)
        report.loaded.append(name)
        used[entry["name"]] = True

    report.unused = [name for name, u in used.items() if not u]
    if mode == "strict" and not report.fully_loaded:
        problems = [f"missing source for {n}" for n in report.missing]
        problems += [f"{n}: {reason}" for n, reason in report.skipped]
        raise ManifestError(
            f"strict load from {manifest.path} failed:\n  " + "\n  ".join(problems)
        )
    merged = dict(state)
    merged.update(new_state)
    model.load_state_dict(merged)
    return report
