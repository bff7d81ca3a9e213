"""Prompt adapter: fuses the heat map with the image into a one-channel prompt.

The heat map is concatenated with the RGB image, pushed through two
conv -> batch-norm -> relu stages down to one channel, and added back onto the
heat map. With all weights zeroed the adapter is the identity on the heat map.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class AdapterConfig:
    mid_channels: int = 8
    kernel_size: int = 3

    def __post_init__(self):
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.mid_channels < 1:
            raise ValueError(f"mid_channels must be >= 1, got {self.mid_channels}")


class PromptAdapter(nn.Module):
    def __init__(self, config: AdapterConfig | None = None):
        super().__init__()
        config = config or AdapterConfig()
        self.config = config
        pad = config.kernel_size // 2
        self.conv1 = nn.Conv2d(4, config.mid_channels, config.kernel_size, padding=pad)
        self.bn1 = nn.BatchNorm2d(config.mid_channels)
        self.conv2 = nn.Conv2d(config.mid_channels, 1, config.kernel_size, padding=pad)
        self.bn2 = nn.BatchNorm2d(1)

    def residual(self, heatmap: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
        """The conv branch alone (pre-residual), one channel at input resolution."""
        if heatmap.shape[-2:] != image.shape[-2:]:
            raise ValueError(
                f"heat map {tuple(heatmap.shape[-2:])} and image "
                f"{tuple(image.shape[-2:])} sizes differ"
            )
        x = torch.cat([heatmap, image], dim=1)
        x = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(x)))

    def forward(self, heatmap: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
        """prompt = heatmap + f(concat(heatmap, image)); shapes (B,1,S,S) and (B,3,S,S)."""
        return heatmap + self.residual(heatmap, image)
