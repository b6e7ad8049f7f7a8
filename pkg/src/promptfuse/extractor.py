"""Per-modality feature extraction conditioned on a degradation prompt."""

from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import (
    ChannelAttention,
    ChannelTransformerBlock,
    MultiScaleConvBlock,
    PromptGuidance,
    _as_batch,
)
from .core import LEAKY_SLOPE, NetworkConfig


class ExtractorBlock(nn.Module):
    """Shape-preserving feature extractor for one modality.

    The input feature map is first modulated by the prompt embedding, then
    processed by two parallel paths: a stack of channel-transformer blocks
    (global structure) and a multi-scale conv block (local texture).  The
    two results are concatenated, reweighted by channel attention, and
    merged back to the input width with a 1x1 conv.
    """

    def __init__(self, channels: int, cfg: NetworkConfig):
        super().__init__()
        self.guidance = PromptGuidance(cfg.prompt_dim, channels)
        self.transformer = nn.Sequential(
            *[
                ChannelTransformerBlock(channels, cfg.attention_heads)
                for _ in range(cfg.transformer_depth)
            ]
        )
        self.msconv = MultiScaleConvBlock(
            channels, kernels=cfg.msconv_kernels, depth=cfg.msconv_depth
        )
        self.channel_attn = ChannelAttention(2 * channels)
        self.merge = nn.Conv2d(2 * channels, channels, 1)

    def forward(self, x: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        x4, squeeze = _as_batch(x)
        if prompt.dim() == 1 and not squeeze:
            prompt = prompt.unsqueeze(0).expand(x4.shape[0], -1)
        g = self.guidance(x4, prompt)
        y = torch.cat([self.transformer(g), self.msconv(g)], dim=1)
        y = self.merge(self.channel_attn(y))
        return y.squeeze(0) if squeeze else y


class PlainConvBlock(nn.Module):
    """Prompt-blind stand-in for :class:`ExtractorBlock` (ablation baseline).

    A single 3x3 conv with LeakyReLU; the prompt argument is accepted and
    ignored so the two blocks are interchangeable in the network.
    """

    def __init__(self, channels: int, cfg: NetworkConfig):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="replicate")
        self.act = nn.LeakyReLU(LEAKY_SLOPE)

    def forward(self, x: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        x4, squeeze = _as_batch(x)
        y = self.act(self.conv(x4))
        return y.squeeze(0) if squeeze else y
