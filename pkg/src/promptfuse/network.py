"""The end-to-end fusion network.

A four-level pyramid.  Each modality is lifted by a shallow 3x3 conv,
refined by a prompt-conditioned extractor at every level, and downsampled
between levels (channels double, spatial size halves).  Decoding runs
coarse-to-fine: a fusion block joins the two modality features and the
upsampled result of the coarser level, conditioned on both prompts.  A
small conv head maps the finest fused feature to a ``(3, H, W)`` output in
``[0, 1]`` interpreted as full-range YCbCr.

The visible input enters the network as YCbCr so the luminance structure
and the chroma planes are separated from the start; the infrared input is
its single channel.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn

from .blocks import init_parameters
from .core import (
    ConfigError,
    LossWeights,
    NetworkConfig,
    PromptEmbedding,
    check_network_input,
    validate_config,
)
from .extractor import ExtractorBlock, PlainConvBlock
from .fusion import FusionBlock, PlainFusionBlock
from .imgproc import Downsample2, Upsample2, rgb_to_ycbcr
from .prompts import TextEncoder

VARIANTS = (
    "full",
    "no_extractor",
    "no_fusion",
    "no_color_loss",
    "no_texture_loss",
)

_LEAKY = 0.2


class FusionNet(nn.Module):
    """Prompt-conditioned infrared/visible fusion network.

    ``variant`` selects an ablation: ``no_extractor`` swaps every extractor
    for a plain conv block, ``no_fusion`` swaps every fusion block for a
    concat + 1x1 conv baseline.  The two loss ablations keep the full
    architecture (they only change training weights) but are recorded so a
    checkpoint remembers how it was trained.

    All parameters are drawn from ``cfg.seed`` in a fixed order, so two
    networks built from equal configs are identical regardless of global
    RNG state.
    """

    def __init__(
        self,
        cfg: NetworkConfig,
        variant: str = "full",
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        validate_config(cfg)
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.cfg = cfg
        self.variant = variant
        widths = cfg.channel_plan()

        extract_cls = PlainConvBlock if variant == "no_extractor" else ExtractorBlock
        fuse_cls = PlainFusionBlock if variant == "no_fusion" else FusionBlock

        self.shallow_ir = nn.Conv2d(1, widths[0], 3, padding=1, padding_mode="replicate")
        self.shallow_vi = nn.Conv2d(3, widths[0], 3, padding=1, padding_mode="replicate")
        self.extract_ir = nn.ModuleList(extract_cls(w, cfg) for w in widths)
        self.extract_vi = nn.ModuleList(extract_cls(w, cfg) for w in widths)
        self.down_ir = nn.ModuleList(Downsample2(w) for w in widths[:-1])
        self.down_vi = nn.ModuleList(Downsample2(w) for w in widths[:-1])
        self.fuse_levels = nn.ModuleList(fuse_cls(w, cfg) for w in widths)
        self.up = nn.ModuleList(Upsample2(w) for w in widths[1:])
        self.recon = nn.Sequential(
            nn.Conv2d(widths[0], widths[0], 3, padding=1, padding_mode="replicate"),
            nn.LeakyReLU(_LEAKY),
            nn.Conv2d(widths[0], widths[0] // 2, 3, padding=1, padding_mode="replicate"),
            nn.LeakyReLU(_LEAKY),
            nn.Conv2d(widths[0] // 2, 3, 3, padding=1, padding_mode="replicate"),
        )

        if dtype != torch.float32:
            self.to(dtype)
        gen = torch.Generator().manual_seed(cfg.seed)
        touched = init_parameters(self, gen)
        total = sum(1 for _ in self.parameters())
        if touched != total:
            raise RuntimeError(
                f"initialized {touched} parameter tensors, expected {total}"
            )

    @property
    def dtype(self) -> torch.dtype:
        return self.shallow_ir.weight.dtype

    def _embed_prompts(
        self,
        prompts: str | Sequence[str] | torch.Tensor | PromptEmbedding,
        batch: int,
        encoder: TextEncoder | None,
    ) -> torch.Tensor:
        """Normalize any accepted prompt form to a ``(batch, prompt_dim)``
        tensor in the network dtype."""
        if isinstance(prompts, PromptEmbedding):
            vec = prompts.vector.unsqueeze(0).expand(batch, -1)
        elif isinstance(prompts, torch.Tensor):
            vec = prompts.unsqueeze(0).expand(batch, -1) if prompts.dim() == 1 else prompts
        elif isinstance(prompts, str):
            if encoder is None:
                raise ValueError("string prompts need an encoder")
            vec = encoder.encode(prompts).vector.unsqueeze(0).expand(batch, -1)
        else:
            texts = list(prompts)
            if len(texts) != batch:
                raise ValueError(f"got {len(texts)} prompts for a batch of {batch}")
            if encoder is None:
                raise ValueError("string prompts need an encoder")
            vec = torch.stack([encoder.encode(t).vector for t in texts])
        if vec.shape != (batch, self.cfg.prompt_dim):
            raise ValueError(
                f"prompt embedding shape {tuple(vec.shape)} != "
                f"({batch}, {self.cfg.prompt_dim})"
            )
        return vec.to(self.dtype)

    def forward(
        self,
        ir: torch.Tensor,
        vi: torch.Tensor,
        prompt_ir,
        prompt_vi,
        encoder: TextEncoder | None = None,
    ) -> torch.Tensor:
        """Fuse one pair or a batch; the result is YCbCr in ``[0, 1]``.

        ``prompt_ir``/``prompt_vi`` may be prompt strings (requires
        ``encoder``), :class:`PromptEmbedding` values, or raw embedding
        tensors of shape ``(prompt_dim,)`` or ``(N, prompt_dim)``.
        """
        check_network_input(ir, vi)
        squeeze = ir.dim() == 3
        ir4 = ir.unsqueeze(0) if squeeze else ir
        vi4 = vi.unsqueeze(0) if squeeze else vi
        n = ir4.shape[0]
        p_ir = self._embed_prompts(prompt_ir, n, encoder)
        p_vi = self._embed_prompts(prompt_vi, n, encoder)

        f_ir = self.shallow_ir(ir4.to(self.dtype))
        f_vi = self.shallow_vi(rgb_to_ycbcr(vi4.to(self.dtype)))
        feats_ir, feats_vi = [], []
        for lvl in range(self.cfg.num_scales):
            f_ir = self.extract_ir[lvl](f_ir, p_ir)
            f_vi = self.extract_vi[lvl](f_vi, p_vi)
            feats_ir.append(f_ir)
            feats_vi.append(f_vi)
            if lvl + 1 < self.cfg.num_scales:
                f_ir = self.down_ir[lvl](f_ir)
                f_vi = self.down_vi[lvl](f_vi)

        carried = None
        fused = None
        for lvl in range(self.cfg.num_scales - 1, -1, -1):
            fused = self.fuse_levels[lvl](carried, feats_ir[lvl], feats_vi[lvl], p_ir, p_vi)
            if lvl > 0:
                carried = self.up[lvl - 1](fused)

        out = torch.sigmoid(self.recon(fused))
        return out.squeeze(0) if squeeze else out


def count_parameters(net: nn.Module) -> int:
    """Total number of scalar parameters in ``net``."""
    return sum(p.numel() for p in net.parameters())


def ablation_variant(net: FusionNet, variant: str) -> FusionNet:
    """A fresh network with ``variant`` applied, re-initialized from the
    same seed as ``net`` (``full`` reproduces the original exactly)."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return FusionNet(net.cfg, variant=variant, dtype=net.dtype)


def loss_variant_weights(variant: str, base: LossWeights) -> LossWeights:
    """Training weights for an ablation variant (structural variants and
    ``full`` keep the base weights)."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    if variant == "no_color_loss":
        return LossWeights(base.intensity, base.texture, 0.0)
    if variant == "no_texture_loss":
        return LossWeights(base.intensity, 0.0, base.color)
    return base
