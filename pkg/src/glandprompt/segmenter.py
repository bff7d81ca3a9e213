"""Promptable dual-decoder segmentation network.

One shared ViT image encoder feeds two (prompt encoder, mask decoder) pairs:
the gland branch consumes the adapter-processed heat map as a dense prompt
added onto the image embedding, the contour branch runs with a learned
constant no-prompt embedding. Each decoder is a small two-way-attention
transformer (an output token attending to the embedding grid and vice versa)
followed by learned upsampling to full-resolution logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from glandprompt.adapter import AdapterConfig, PromptAdapter
from glandprompt.layers import (
    Attention,
    LayerNorm2d,
    Mlp,
    TransformerBlock,
    init_truncated_normal,
    sincos_pos_grid,
)


@dataclass
class SegmenterConfig:
    image_size: int = 400
    encoder_patch: int = 16
    encoder_dim: int = 128
    encoder_depth: int = 4
    encoder_heads: int = 4
    embed_dim: int = 128      # prompt/decoder width
    decoder_depth: int = 2
    decoder_heads: int = 4
    mlp_ratio: float = 4.0
    num_output_tokens: int = 1
    adapter_mid_channels: int = 8
    adapter_kernel_size: int = 3

    def __post_init__(self):
        if self.image_size % self.encoder_patch != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by encoder_patch {self.encoder_patch}"
            )
        if self.encoder_patch & (self.encoder_patch - 1) != 0:
            raise ValueError(f"encoder_patch must be a power of two, got {self.encoder_patch}")
        if self.embed_dim % 8 != 0:
            raise ValueError(f"embed_dim must be divisible by 8, got {self.embed_dim}")

    @property
    def grid(self) -> int:
        return self.image_size // self.encoder_patch

    @property
    def adapter(self) -> AdapterConfig:
        return AdapterConfig(self.adapter_mid_channels, self.adapter_kernel_size)


@dataclass
class BranchOutput:
    gland_prob: torch.Tensor    # (B, S, S) in (0, 1)
    contour_prob: torch.Tensor  # (B, S, S) in (0, 1)


class ImageEncoderViT(nn.Module):
    """Patch-embed ViT producing a (B, C, G, G) embedding grid.

    eval_count tracks forward invocations so callers can assert the
    single-encoder-evaluation-per-forward contract.
    """

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        d, g = config.encoder_dim, config.grid
        self.patch_embed = nn.Conv2d(3, d, config.encoder_patch, config.encoder_patch)
        self.pos_embed = nn.Parameter(torch.zeros(1, g * g, d))
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.encoder_heads, config.mlp_ratio)
            for _ in range(config.encoder_depth)
        )
        self.norm = nn.LayerNorm(d)
        self.neck = nn.Sequential(
            nn.Conv2d(d, config.embed_dim, 1, bias=False),
            LayerNorm2d(config.embed_dim),
        )
        self.eval_count = 0
        init_truncated_normal(self)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s, g = self.config.image_size, self.config.grid
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ValueError(f"expected input (B, 3, {s}, {s}), got {tuple(x.shape)}")
        self.eval_count += 1
        tokens = self.patch_embed(x).flatten(2).transpose(1, 2) + self.pos_embed
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.norm(tokens)
        return self.neck(tokens.transpose(1, 2).reshape(x.shape[0], -1, g, g))


class DensePromptEncoder(nn.Module):
    """Downsampling conv stack mapping a (B, 1, S, S) prompt to the embedding grid."""

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        c = config.embed_dim
        n_down = config.encoder_patch.bit_length() - 1  # log2
        chans = [1] + [max(1, c >> (n_down - 1 - i)) for i in range(n_down)]
        layers = []
        for i in range(n_down):
            layers.append(nn.Conv2d(chans[i], chans[i + 1], 2, 2))
            layers.append(LayerNorm2d(chans[i + 1]))
            layers.append(nn.GELU())
        layers.append(nn.Conv2d(c, c, 1))
        self.stack = nn.Sequential(*layers)

    def forward(self, prompt: torch.Tensor) -> torch.Tensor:
        return self.stack(prompt)


class NoPromptEncoder(nn.Module):
    """Learned constant embedding broadcast over the grid; input-independent."""

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.embedding = nn.Embedding(1, config.embed_dim)
        self.grid = config.grid

    def forward(self, batch_size: int = 1) -> torch.Tensor:
        w = self.embedding.weight.reshape(1, -1, 1, 1)
        return w.expand(batch_size, -1, self.grid, self.grid)


class TwoWayBlock(nn.Module):
    """Token self-attention, token->image and image->token cross-attention."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.self_attn = Attention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.cross_token_to_image = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self.norm3 = nn.LayerNorm(dim)
        self.cross_image_to_token = Attention(dim, heads)
        self.norm4 = nn.LayerNorm(dim)

    def forward(self, tokens, image, token_pe, image_pe):
        q = tokens + token_pe
        tokens = self.norm1(tokens + self.self_attn(q, q, tokens))
        q = tokens + token_pe
        k = image + image_pe
        tokens = self.norm2(tokens + self.cross_token_to_image(q, k, image))
        tokens = self.norm3(tokens + self.mlp(tokens))
        q = image + image_pe
        k = tokens + token_pe
        image = self.norm4(image + self.cross_image_to_token(q, k, tokens))
        return tokens, image


class MaskDecoder(nn.Module):
    """Two-way-attention decoder emitting full-resolution logits."""

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        c, g = config.embed_dim, config.grid
        self.config = config
        self.output_tokens = nn.Embedding(config.num_output_tokens, c)
        self.register_buffer("image_pe", sincos_pos_grid(c, g))
        self.blocks = nn.ModuleList(
            TwoWayBlock(c, config.decoder_heads, config.mlp_ratio)
            for _ in range(config.decoder_depth)
        )
        self.final_token_to_image = Attention(c, config.decoder_heads)
        self.final_norm = nn.LayerNorm(c)
        self.upscale = nn.Sequential(
            nn.ConvTranspose2d(c, c // 4, 2, 2),
            LayerNorm2d(c // 4),
            nn.GELU(),
            nn.ConvTranspose2d(c // 4, c // 8, 2, 2),
            nn.GELU(),
        )
        self.hyper = nn.Sequential(
            nn.Linear(c, c), nn.ReLU(), nn.Linear(c, c), nn.ReLU(), nn.Linear(c, c // 8),
        )
        init_truncated_normal(self)

    def forward(self, embedding: torch.Tensor) -> torch.Tensor:
        """(B, C, G, G) image+prompt embedding -> (B, S, S) logits."""
        b, c, g, _ = embedding.shape
        image = embedding.flatten(2).transpose(1, 2)              # (B, G*G, C)
        image_pe = self.image_pe.flatten(2).transpose(1, 2).expand(b, -1, -1)
        tokens = self.output_tokens.weight[None].expand(b, -1, -1)
        token_pe = torch.zeros_like(tokens)
        for block in self.blocks:
            tokens, image = block(tokens, image, token_pe, image_pe)
        q = tokens + token_pe
        k = image + image_pe
        tokens = self.final_norm(tokens + self.final_token_to_image(q, k, image))

        spatial = image.transpose(1, 2).reshape(b, c, g, g)
        upscaled = self.upscale(spatial)                          # (B, C//8, 4G, 4G)
        weights = self.hyper(tokens[:, 0])                        # (B, C//8)
        low = torch.einsum("bc,bchw->bhw", weights, upscaled)
        size = self.config.image_size
        return F.interpolate(low[:, None], size=(size, size), mode="bilinear",
                             align_corners=False)[:, 0]


_PROB_EPS = 1e-6


class GradePromptSegmenter(nn.Module):
    """Shared encoder, prompt adapter and two prompt-encoder/decoder pairs."""

    GROUPS = (
        "image_encoder", "adapter", "gland_prompt_encoder", "gland_decoder",
        "contour_prompt_encoder", "contour_decoder",
    )

    def __init__(self, config: SegmenterConfig | None = None):
        super().__init__()
        self.config = config or SegmenterConfig()
        self.image_encoder = ImageEncoderViT(self.config)
        self.adapter = PromptAdapter(self.config.adapter)
        self.gland_prompt_encoder = DensePromptEncoder(self.config)
        self.gland_decoder = MaskDecoder(self.config)
        self.contour_prompt_encoder = NoPromptEncoder(self.config)
        self.contour_decoder = MaskDecoder(self.config)

    def parameter_groups(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in self.GROUPS}

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        return self.image_encoder(image)

    def gland_logits(self, embedding, image, heatmap) -> torch.Tensor:
        prompt = self.adapter(heatmap, image)
        return self.gland_decoder(embedding + self.gland_prompt_encoder(prompt))

    def contour_logits(self, embedding) -> torch.Tensor:
        return self.contour_decoder(embedding + self.contour_prompt_encoder(embedding.shape[0]))

    def forward(self, image: torch.Tensor, heatmap: torch.Tensor) -> BranchOutput:
        """One encoder evaluation feeding both branches.

        image: normalized (B, 3, S, S); heatmap: (B, 1, S, S) in [0, 1].
        """
        embedding = self.encode_image(image)
        gland = torch.sigmoid(self.gland_logits(embedding, image, heatmap))
        contour = torch.sigmoid(self.contour_logits(embedding))
        return BranchOutput(
            gland_prob=gland.clamp(_PROB_EPS, 1.0 - _PROB_EPS),
            contour_prob=contour.clamp(_PROB_EPS, 1.0 - _PROB_EPS),
        )
