"""Cross-modality fusion conditioned on both degradation prompts."""

from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import (
    ChannelAttention,
    ChannelTransformerBlock,
    MultiScaleConvBlock,
    GuidanceMLP,
    SpatialAttention,
    _as_batch,
    modulate,
)
from .core import GuidanceParams, NetworkConfig


class FusionBlock(nn.Module):
    """Fuse infrared and visible features at one pyramid level.

    Each modality passes through its own spatial attention gate; the gated
    maps are concatenated and reduced to a joint feature.  The two prompt
    embeddings are projected to a single vector whose MLP output modulates
    both the joint feature and the feature carried in from the previous
    (coarser) fusion level.  Those two modulated maps are concatenated,
    reweighted by channel attention, reduced, and refined by the same
    transformer/multi-scale pair used in the extractor.

    At the coarsest level there is no carried feature; the joint feature
    itself stands in for it, so the block signature stays uniform.
    """

    def __init__(self, channels: int, cfg: NetworkConfig):
        super().__init__()
        self.prompt_proj = nn.Linear(2 * cfg.prompt_dim, cfg.prompt_dim)
        self.guide_mlp = GuidanceMLP(cfg.prompt_dim, channels)
        self.attn_ir = SpatialAttention()
        self.attn_vi = SpatialAttention()
        self.reduce_in = nn.Conv2d(2 * channels, channels, 1)
        self.channel_attn = ChannelAttention(2 * channels)
        self.reduce_mid = nn.Conv2d(2 * channels, channels, 1)
        self.msconv = MultiScaleConvBlock(
            channels, kernels=cfg.msconv_kernels, depth=cfg.msconv_depth
        )
        self.transformer = nn.Sequential(
            *[
                ChannelTransformerBlock(channels, cfg.attention_heads)
                for _ in range(cfg.transformer_depth)
            ]
        )
        self.reduce_out = nn.Conv2d(2 * channels, channels, 1)

    def fuse_prompts(
        self, p_ir: torch.Tensor, p_vi: torch.Tensor
    ) -> GuidanceParams:
        """Project the two prompt embeddings to joint modulation vectors."""
        if p_ir.shape != p_vi.shape:
            raise ValueError(
                f"prompt shapes differ: {tuple(p_ir.shape)} vs {tuple(p_vi.shape)}"
            )
        w = self.prompt_proj.weight
        joint = self.prompt_proj(torch.cat([p_ir, p_vi], dim=-1).to(w.dtype))
        scale, shift = self.guide_mlp(joint)
        return GuidanceParams(scale=scale, shift=shift)

    def forward(
        self,
        carried: torch.Tensor | None,
        f_ir: torch.Tensor,
        f_vi: torch.Tensor,
        p_ir: torch.Tensor,
        p_vi: torch.Tensor,
    ) -> torch.Tensor:
        if f_ir.shape != f_vi.shape:
            raise ValueError(
                f"feature shapes differ: {tuple(f_ir.shape)} vs {tuple(f_vi.shape)}"
            )
        ir4, squeeze = _as_batch(f_ir)
        vi4, _ = _as_batch(f_vi)
        if carried is not None:
            carried4, _ = _as_batch(carried)
            if carried4.shape != ir4.shape:
                raise ValueError(
                    f"carried feature shape {tuple(carried4.shape)} != "
                    f"modality feature shape {tuple(ir4.shape)}"
                )
        if p_ir.dim() == 1 and not squeeze:
            p_ir = p_ir.unsqueeze(0).expand(ir4.shape[0], -1)
            p_vi = p_vi.unsqueeze(0).expand(vi4.shape[0], -1)

        joint = self.reduce_in(
            torch.cat([self.attn_ir(ir4), self.attn_vi(vi4)], dim=1)
        )
        params = self.fuse_prompts(p_ir, p_vi)
        guided = modulate(joint, params.scale, params.shift)
        prev = joint if carried is None else carried4
        carried_mod = modulate(prev, params.scale, params.shift)

        mid = self.reduce_mid(
            self.channel_attn(torch.cat([guided, carried_mod], dim=1))
        )
        out = self.reduce_out(
            torch.cat([self.msconv(mid), self.transformer(mid)], dim=1)
        )
        return out.squeeze(0) if squeeze else out


class PlainFusionBlock(nn.Module):
    """Prompt-blind stand-in for :class:`FusionBlock` (ablation baseline).

    Concatenation followed by 1x1 convs: one to merge the two modality
    features and one to merge in the carried feature.  Prompts are accepted
    and ignored.
    """

    def __init__(self, channels: int, cfg: NetworkConfig):
        super().__init__()
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        self.merge = nn.Conv2d(2 * channels, channels, 1)

    def forward(
        self,
        carried: torch.Tensor | None,
        f_ir: torch.Tensor,
        f_vi: torch.Tensor,
        p_ir: torch.Tensor,
        p_vi: torch.Tensor,
    ) -> torch.Tensor:
        ir4, squeeze = _as_batch(f_ir)
        vi4, _ = _as_batch(f_vi)
        base = self.fuse(torch.cat([ir4, vi4], dim=1))
        prev = base if carried is None else _as_batch(carried)[0]
        out = self.merge(torch.cat([base, prev], dim=1))
        return out.squeeze(0) if squeeze else out
