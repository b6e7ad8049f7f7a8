"""Training losses.

The fused output and both references agree on a simple target: keep the
brighter of the two luminance signals, keep the stronger of the two
gradients, and keep the visible chroma.  Intensity and texture terms act
on the Y plane only, the color term on Cb/Cr.  All three are mean absolute
errors, so each is exactly zero on its analytically matched input.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .core import LossWeights
from .imgproc import rgb_to_ycbcr, sobel_gradient


@dataclass(frozen=True)
class LossReport:
    """Detached component values of one loss evaluation."""

    intensity: float
    texture: float
    color: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "intensity": self.intensity,
            "texture": self.texture,
            "color": self.color,
            "total": self.total,
        }


def elementwise_max(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Elementwise max; ties take the first argument (and its gradient)."""
    return torch.where(a >= b, a, b)


def _check_plane(name: str, t: torch.Tensor) -> None:
    if t.shape[-3] != 1:
        raise ValueError(f"{name} must be single-channel, got {t.shape[-3]} channels")


def intensity_loss(
    fused_y: torch.Tensor, ir: torch.Tensor, vi_y: torch.Tensor
) -> torch.Tensor:
    """Mean L1 distance between fused luminance and max(ir, vi luminance)."""
    for name, t in (("fused_y", fused_y), ("ir", ir), ("vi_y", vi_y)):
        _check_plane(name, t)
    if fused_y.shape != ir.shape or ir.shape != vi_y.shape:
        raise ValueError("intensity loss inputs must share one shape")
    target = elementwise_max(ir, vi_y)
    return (fused_y - target).abs().mean()


def texture_loss(
    fused_y: torch.Tensor, ir: torch.Tensor, vi_y: torch.Tensor
) -> torch.Tensor:
    """Mean L1 distance between the fused Sobel magnitude and the
    elementwise max of the reference Sobel magnitudes."""
    for name, t in (("fused_y", fused_y), ("ir", ir), ("vi_y", vi_y)):
        _check_plane(name, t)
    if fused_y.shape != ir.shape or ir.shape != vi_y.shape:
        raise ValueError("texture loss inputs must share one shape")
    target = elementwise_max(sobel_gradient(ir), sobel_gradient(vi_y))
    return (sobel_gradient(fused_y) - target).abs().mean()


def color_loss(fused_ycbcr: torch.Tensor, vi_ycbcr: torch.Tensor) -> torch.Tensor:
    """Mean L1 distance of the Cb and Cr planes to the visible reference."""
    for name, t in (("fused", fused_ycbcr), ("vi_ref", vi_ycbcr)):
        if t.shape[-3] != 3:
            raise ValueError(f"{name} must be a 3-channel YCbCr image")
    if fused_ycbcr.shape != vi_ycbcr.shape:
        raise ValueError("color loss inputs must share one shape")
    cb = (fused_ycbcr[..., 1:2, :, :] - vi_ycbcr[..., 1:2, :, :]).abs().mean()
    cr = (fused_ycbcr[..., 2:3, :, :] - vi_ycbcr[..., 2:3, :, :]).abs().mean()
    return cb + cr


def fusion_loss(
    fused_ycbcr: torch.Tensor,
    ir_ref: torch.Tensor,
    vi_ref_rgb: torch.Tensor,
    weights: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, LossReport]:
    """Weighted training loss; returns the differentiable total and a
    detached per-component report.

    ``fused_ycbcr`` is the network output (YCbCr); ``ir_ref`` the clean
    infrared image; ``vi_ref_rgb`` the clean visible image in RGB.
    """
    vi_ycbcr = rgb_to_ycbcr(vi_ref_rgb)
    fused_y = fused_ycbcr[..., 0:1, :, :]
    vi_y = vi_ycbcr[..., 0:1, :, :]
    li = intensity_loss(fused_y, ir_ref, vi_y)
    lt = texture_loss(fused_y, ir_ref, vi_y)
    lc = color_loss(fused_ycbcr, vi_ycbcr)
    total = weights.intensity * li + weights.texture * lt + weights.color * lc
    report = LossReport(
        intensity=float(li.detach()),
        texture=float(lt.detach()),
        color=float(lc.detach()),
        total=float(total.detach()),
    )
    return total, report


def total_loss(
    fused_ycbcr: torch.Tensor,
    ir_ref: torch.Tensor,
    vi_ref_rgb: torch.Tensor,
    weights: LossWeights = LossWeights(),
) -> LossReport:
    """Like :func:`fusion_loss` but returns only the detached report."""
    _, report = fusion_loss(fused_ycbcr, ir_ref, vi_ref_rgb, weights)
    return report
