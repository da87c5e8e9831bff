"""
Toy flux-guided super-resolution model.

The guidance path turns a flux map into a three-level feature pyramid; at
each level a controller mixes K learnable prompt patterns with weights
derived from both the image features and the guidance (global average pool
plus a linear layer each), and a small single-head transformer block fuses
the selected prompt with the features.  A three-level conv encoder/decoder
with a pixel-shuffle head does the actual restoration.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

DEFAULT_CHANNELS = 16
DEFAULT_PROMPTS = 5


class FluxGuidanceGenerator(nn.Module):
    """Three conv blocks mapping a flux map to guidance grids at scales
    1, 1/2 and 1/4 with channel widths C, 2C, 4C.

    Zero-bias convolutions with ReLU keep the path positively homogeneous:
    a zero map yields a zero pyramid and doubling the map doubles it.
    """

    def __init__(self, channels: int = DEFAULT_CHANNELS):
        super().__init__()
        self.channels = channels
        self.block1 = nn.Conv2d(1, channels, 3, stride=1, padding=1, bias=False)
        self.block2 = nn.Conv2d(channels, 2 * channels, 3, stride=2, padding=1,
                                bias=False)
        self.block3 = nn.Conv2d(2 * channels, 4 * channels, 3, stride=2,
                                padding=1, bias=False)

    def forward(self, flux_map: torch.Tensor):
        if flux_map.shape[-1] % 4 or flux_map.shape[-2] % 4:
            raise ValueError("flux map dims must be divisible by 4")
        g1 = F.relu(self.block1(flux_map))
        g2 = F.relu(self.block2(g1))
        g3 = F.relu(self.block3(g2))
        return g1, g2, g3


class GuidanceControlModule(nn.Module):
    """Selects a mixture of K learnable prompt patterns.

    Two learnable heads (global average pooling + linear) read the image
    features and the guidance, each yielding a K-vector; the output is
    sum_k wF_k * wG_k * P[k], shaped like the feature grid.
    """

    def __init__(self, channels: int, height: int, width: int,
                 k: int = DEFAULT_PROMPTS):
        super().__init__()
        if k < 1:
            raise ValueError("need at least one prompt pattern")
        self.k = k
        self.prompts = nn.Parameter(0.02 * torch.randn(k, channels, height,
                                                       width))
        self.feature_head = nn.Linear(channels, k)
        self.guidance_head = nn.Linear(channels, k)

    def forward(self, features: torch.Tensor, guidance: torch.Tensor):
        if features.shape[1:] != self.prompts.shape[1:]:
            raise ValueError(
                f"feature grid {tuple(features.shape[1:])} does not match "
                f"prompt bank {tuple(self.prompts.shape[1:])}")
        if guidance.shape != features.shape:
            raise ValueError("guidance grid must match the feature grid")
        w_f = self.feature_head(features.mean(dim=(2, 3)))
        w_g = self.guidance_head(guidance.mean(dim=(2, 3)))
        weights = w_f * w_g  # (B, K)
        return torch.einsum("bk,kchw->bchw", weights, self.prompts)


class PromptInteraction(nn.Module):
    """Single-head transformer block over the concatenated prompt/features."""

    def __init__(self, channels: int):
        super().__init__()
        self.proj_in = nn.Conv2d(2 * channels, channels, 1)
        self.norm1 = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.attn_out = nn.Linear(channels, channels)
        self.norm2 = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(nn.Linear(channels, 2 * channels), nn.GELU(),
                                 nn.Linear(2 * channels, channels))

    def forward(self, mixed: torch.Tensor, features: torch.Tensor):
        b, c, h, w = features.shape
        x = self.proj_in(torch.cat([mixed, features], dim=1))
        tokens = x.flatten(2).transpose(1, 2)  # (B, HW, C)
        y = self.norm1(tokens)
        q, k, v = self.qkv(y).chunk(3, dim=-1)
        att = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
        tokens = tokens + self.attn_out(att @ v)
        tokens = tokens + self.mlp(self.norm2(tokens))
        return tokens.transpose(1, 2).reshape(b, c, h, w)


class GuidanceController(nn.Module):
    """One per-scale controller: prompt mixing followed by interaction."""

    def __init__(self, channels: int, height: int, width: int,
                 k: int = DEFAULT_PROMPTS):
        super().__init__()
        self.gcm = GuidanceControlModule(channels, height, width, k)
        self.pim = PromptInteraction(channels)

    def forward(self, features: torch.Tensor, guidance: torch.Tensor):
        return self.pim(self.gcm(features, guidance), features)


def _conv_block(c_in: int, c_out: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
        nn.LeakyReLU(0.2, inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        nn.LeakyReLU(0.2, inplace=True),
    )


class ToyRestorer(nn.Module):
    """Three-level conv encoder/decoder with flux guidance and a
    pixel-shuffle upsampling head.

    Input grids are the low-resolution image and its flux map (same dims);
    the output is the ``scale``-times larger restored image.  The prompt
    banks are sized for a fixed input shape.
    """

    def __init__(self, lr_height: int, lr_width: int, scale: int = 2,
                 channels: int = DEFAULT_CHANNELS, k: int = DEFAULT_PROMPTS):
        super().__init__()
        if lr_height % 4 or lr_width % 4:
            raise ValueError("input dims must be divisible by 4")
        self.scale = scale
        c = channels
        self.stem = _conv_block(1, c)
        self.down1 = _conv_block(c, 2 * c, stride=2)
        self.down2 = _conv_block(2 * c, 4 * c, stride=2)
        self.fgg = FluxGuidanceGenerator(c)
        self.fgc1 = GuidanceController(c, lr_height, lr_width, k)
        self.fgc2 = GuidanceController(2 * c, lr_height // 2, lr_width // 2, k)
        self.fgc3 = GuidanceController(4 * c, lr_height // 4, lr_width // 4, k)
        self.up2 = nn.ConvTranspose2d(4 * c, 2 * c, 2, stride=2)
        self.dec2 = _conv_block(4 * c, 2 * c)
        self.up1 = nn.ConvTranspose2d(2 * c, c, 2, stride=2)
        self.dec1 = _conv_block(2 * c, c)
        self.head = nn.Conv2d(c, scale * scale, 3, padding=1)
        self.shuffle = nn.PixelShuffle(scale)

    def forward(self, lr: torch.Tensor, flux_map: torch.Tensor):
        f1 = self.stem(lr)
        f2 = self.down1(f1)
        f3 = self.down2(f2)
        g1, g2, g3 = self.fgg(flux_map)
        e1 = self.fgc1(f1, g1)
        e2 = self.fgc2(f2, g2)
        e3 = self.fgc3(f3, g3)
        d2 = self.dec2(torch.cat([self.up2(e3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        base = F.interpolate(lr, scale_factor=self.scale, mode="nearest")
        return base + self.shuffle(self.head(d1))
