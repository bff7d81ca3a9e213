"""Transformer image classifier for benign/malignant grading.

A compact ViT with a global-average-pool head. Pooling over the spatial
tokens (rather than a class token) keeps the classification score
differentiable with respect to the last block's spatial token grid, which is
exactly the activation the heat-map pass needs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from glandprompt.dataset import GRADES
from glandprompt.layers import TransformerBlock, init_truncated_normal

# Bright-field histology imagery sits high in the intensity range; centering
# there keeps the small class signal from riding on a large common offset.
DEFAULT_MEAN = (0.89, 0.85, 0.90)
DEFAULT_STD = (0.08, 0.10, 0.07)


@dataclass
class ClassifierConfig:
    image_size: int = 400
    token_patch_size: int = 16
    embed_dim: int = 192
    depth: int = 6
    heads: int = 3
    mlp_ratio: float = 4.0
    num_classes: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if self.image_size % self.token_patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by "
                f"token_patch_size {self.token_patch_size}"
            )
        if self.num_classes != 2:
            raise ValueError("the grade classifier is strictly binary")

    @property
    def grid(self) -> int:
        return self.image_size // self.token_patch_size


@dataclass
class ClassifierOutput:
    logits: torch.Tensor        # (2,)
    feature_grid: torch.Tensor  # (embed_dim, G, G)


class GradeClassifier(nn.Module):
    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        d, g = config.embed_dim, config.grid
        self.patch_embed = nn.Conv2d(3, d, config.token_patch_size, config.token_patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, g * g, d))
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.heads, config.mlp_ratio, config.dropout)
            for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.num_classes)
        init_truncated_normal(self)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def _check_input(self, x: torch.Tensor):
        s = self.config.image_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ValueError(f"expected input (B, 3, {s}, {s}), got {tuple(x.shape)}")

    def forward_tokens(self, x: torch.Tensor) -> torch.Tensor:
        """Rectified spatial tokens after the last block, shape (B, G*G, D).

        The rectification makes the final token grid a non-negative
        activation map (CNN-style), so both classes must be coded by the
        presence of activation rather than its sign. Activation-weighting
        CAM methods assume exactly this.
        """
        self._check_input(x)
        tokens = self.patch_embed(x).flatten(2).transpose(1, 2) + self.pos_embed
        for block in self.blocks:
            tokens = block(tokens)
        return torch.relu(tokens)

    def head_from_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.head(self.norm(tokens.mean(dim=1)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head_from_tokens(self.forward_tokens(x))

    def forward_with_feature_grid(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Logits plus the token grid they are computed from, as (B, D, G, G).

        The logits are recomputed from the returned grid tensor so that it is
        an autograd ancestor of the score (gradients w.r.t. it are defined).
        """
        g = self.config.grid
        tokens = self.forward_tokens(x)
        feature_grid = tokens.transpose(1, 2).reshape(x.shape[0], -1, g, g)
        logits = self.head_from_tokens(feature_grid.flatten(2).transpose(1, 2))
        return logits, feature_grid


def normalize_image(image: np.ndarray, mean=DEFAULT_MEAN, std=DEFAULT_STD) -> torch.Tensor:
    """uint8 HxWx3 image -> normalized float32 (3, H, W) tensor."""
    x = torch.from_numpy(np.ascontiguousarray(image)).float() / 255.0
    x = x.permute(2, 0, 1)
    mean = torch.tensor(mean).view(3, 1, 1)
    std = torch.tensor(std).view(3, 1, 1)
    return (x - mean) / std


def classify(model: GradeClassifier, image: torch.Tensor) -> ClassifierOutput:
    """Deterministic evaluation of one normalized (3, S, S) image."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logits, grid = model.forward_with_feature_grid(image[None])
    finally:
        model.train(was_training)
    return ClassifierOutput(logits=logits[0], feature_grid=grid[0])


@dataclass
class TrainReport:
    train_accuracy: float
    val_accuracy: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    val_ids: list[str] = field(default_factory=list)


def _accuracy(model, images, labels, batch_size=16) -> float:
    if len(images) == 0:
        return float("nan")
    model.eval()
    hits = 0
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            batch = torch.stack(images[i:i + batch_size])
            hits += int((model(batch).argmax(1) == labels[i:i + batch_size]).sum())
    return hits / len(images)


def train_classifier(
    samples: list[tuple[np.ndarray, str, str]],
    config: ClassifierConfig,
    *,
    epochs: int = 3,
    lr: float = 1e-4,
    batch_size: int = 8,
    val_fraction: float = 0.2,
    seed: int = 0,
    mean=DEFAULT_MEAN,
    std=DEFAULT_STD,
    log=None,
) -> tuple[GradeClassifier, TrainReport]:
    """Train a grade classifier on (image, grade, source_id) samples.

    The train/val split is disjoint by source image id, never by patch, so
    overlapping corner crops cannot leak. Returns the weights from the best
    validation epoch (final weights when val_fraction is 0).
    """
    if not samples:
        raise ValueError("empty training dataset")
    torch.manual_seed(seed)
    model = GradeClassifier(config)

    ids = sorted({sid for _, _, sid in samples})
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n_val = int(round(val_fraction * len(ids)))
    if val_fraction > 0 and n_val == 0:
        n_val = 1
    if val_fraction > 0 and n_val >= len(ids):
        raise ValueError(f"val_fraction {val_fraction} leaves an empty train split "
                         f"({len(ids)} source images)")
    val_ids = set(ids[:n_val])

    def tensors(subset):
        images = [normalize_image(img, mean, std) for img, _, _ in subset]
        labels = torch.tensor([GRADES.index(g) for _, g, _ in subset])
        return images, labels

    train_set = [s for s in samples if s[2] not in val_ids]
    val_set = [s for s in samples if s[2] in val_ids]
    if not train_set:
        raise ValueError("empty train split")
    train_images, train_labels = tensors(train_set)
    val_images, val_labels = tensors(val_set)

    opt = torch.optim.Adam(model.parameters(), lr=lr)
    total_steps = max(1, epochs * ((len(train_images) + batch_size - 1) // batch_size))
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=total_steps)
    loss_fn = nn.CrossEntropyLoss()
    shuffler = torch.Generator().manual_seed(seed)

    best_val, best_epoch, best_state = -1.0, -1, None
    history = []
    for epoch in range(epochs):
        model.train()
        order = torch.randperm(len(train_images), generator=shuffler)
        epoch_loss = 0.0
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            batch = torch.stack([train_images[j] for j in idx.tolist()])
            target = train_labels[idx]
            loss = loss_fn(model(batch), target)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            epoch_loss += loss.item() * len(idx)
        val_acc = _accuracy(model, val_images, val_labels) if val_set else float("nan")
        history.append({
            "epoch": epoch,
            "loss": epoch_loss / len(train_images),
            "val_accuracy": val_acc,
        })
        if log:
            log(f"epoch {epoch}: loss {history[-1]['loss']:.4f} val_acc {val_acc:.3f}")
        if val_set and val_acc >= best_val:
            best_val, best_epoch = val_acc, epoch
            best_state = copy.deepcopy(model.state_dict())

    if best_state is not None:
        model.load_state_dict(best_state)
    train_acc = _accuracy(model, train_images, train_labels)
    report = TrainReport(
        train_accuracy=train_acc,
        val_accuracy=best_val if val_set else float("nan"),
        best_epoch=best_epoch if val_set else epochs - 1,
        history=history,
        train_ids=sorted(set(ids) - val_ids),
        val_ids=sorted(val_ids),
    )
    return model, report
