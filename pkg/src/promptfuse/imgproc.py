"""Differentiable image primitives: color transforms, gradients, resampling.

Color conversions use full-range BT.601 with chroma offset at 0.5, so all
three planes stay in ``[0, 1]``.  Both directions are plain matrix maps and
exact inverses of each other up to float rounding; ``ycbcr_to_rgb`` clamps
only as the final step.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import LEAKY_SLOPE

_KR, _KG, _KB = 0.299, 0.587, 0.114


def _ycbcr_matrix(dtype: torch.dtype) -> torch.Tensor:
    kr, kg, kb = _KR, _KG, _KB
    m = [
        [kr, kg, kb],
        [-0.5 * kr / (1 - kb), -0.5 * kg / (1 - kb), 0.5],
        [0.5, -0.5 * kg / (1 - kr), -0.5 * kb / (1 - kr)],
    ]
    return torch.tensor(m, dtype=dtype)


def rgb_to_ycbcr(rgb: torch.Tensor) -> torch.Tensor:
    """Convert an RGB image ``(3, H, W)`` or batch ``(N, 3, H, W)`` to YCbCr.

    Channel order of the result is ``(Y, Cb, Cr)``; Cb and Cr carry a 0.5
    offset so neutral gray maps to ``(g, 0.5, 0.5)``.
    """
    if rgb.shape[-3] != 3:
        raise ValueError(f"expected 3 channels, got {rgb.shape[-3]}")
    m = _ycbcr_matrix(rgb.dtype).to(rgb.device)
    offset = torch.tensor([0.0, 0.5, 0.5], dtype=rgb.dtype, device=rgb.device)
    out = torch.einsum("ij,...jhw->...ihw", m, rgb)
    return out + offset.view(3, 1, 1)


def ycbcr_to_rgb(ycbcr: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`rgb_to_ycbcr`, clamped to ``[0, 1]`` at the end."""
    if ycbcr.shape[-3] != 3:
        raise ValueError(f"expected 3 channels, got {ycbcr.shape[-3]}")
    m = torch.linalg.inv(_ycbcr_matrix(torch.float64)).to(
        dtype=ycbcr.dtype, device=ycbcr.device
    )
    offset = torch.tensor([0.0, 0.5, 0.5], dtype=ycbcr.dtype, device=ycbcr.device)
    centered = ycbcr - offset.view(3, 1, 1)
    out = torch.einsum("ij,...jhw->...ihw", m, centered)
    return out.clamp(0.0, 1.0)


def luminance(img: torch.Tensor) -> torch.Tensor:
    """Per-pixel luminance of a 1- or 3-channel image, shape-preserving in H, W.

    Gray input is returned as-is; RGB input is reduced with the BT.601 weights.
    Result has a single channel.
    """
    c = img.shape[-3]
    if c == 1:
        return img
    if c == 3:
        w = torch.tensor([_KR, _KG, _KB], dtype=img.dtype, device=img.device)
        return torch.einsum("j,...jhw->...hw", w, img).unsqueeze(-3)
    raise ValueError(f"expected 1 or 3 channels, got {c}")


_SOBEL_X = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]


def sobel_kernels(dtype: torch.dtype, device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """The 3x3 Sobel correlation kernels ``(gx, gy)``, ``gy = gx.T``."""
    gx = torch.tensor(_SOBEL_X, dtype=dtype, device=device)
    return gx, gx.t().contiguous()

def sobel_gradient(img: torch.Tensor) -> torch.Tensor:
    """L1 Sobel gradient magnitude ``|Gx| + |Gy|`` of a single-channel image.

    Accepts ``(1, H, W)`` or ``(N, 1, H, W)``; borders use replicate padding
    so the output matches the input size.  Differentiable.
    """
    if img.shape[-3] != 1:
        raise ValueError(f"expected a single channel, got {img.shape[-3]}")
    squeeze = img.dim() == 3
    x = img.unsqueeze(0) if squeeze else img
    gx, gy = sobel_kernels(img.dtype, img.device)
    weight = torch.stack([gx, gy]).unsqueeze(1)  # (2, 1, 3, 3)
    padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
    g = F.conv2d(padded, weight)
    out = g[:, 0:1].abs() + g[:, 1:2].abs()
    return out.squeeze(0) if squeeze else out


def sobel_xy(img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Raw signed Sobel responses ``(Gx, Gy)`` with replicate padding."""
    if img.shape[-3] != 1:
        raise ValueError(f"expected a single channel, got {img.shape[-3]}")
    squeeze = img.dim() == 3
    x = img.unsqueeze(0) if squeeze else img
    gx, gy = sobel_kernels(img.dtype, img.device)
    weight = torch.stack([gx, gy]).unsqueeze(1)
    padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
    g = F.conv2d(padded, weight)
    sx, sy = g[:, 0:1], g[:, 1:2]
    if squeeze:
        return sx.squeeze(0), sy.squeeze(0)
    return sx, sy


def joint_histogram(a: torch.Tensor, b: torch.Tensor, bins: int = 256) -> torch.Tensor:
    """Joint histogram of two equally shaped images over ``[0, 1]``.

    Returns an int64 tensor of shape ``(bins, bins)``; entry ``(i, j)``
    counts pixels whose values of ``a`` and ``b`` fall into bins ``i`` and
    ``j``.  Values at exactly 1.0 land in the last bin.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    ia = (a.reshape(-1) * bins).floor().long().clamp(0, bins - 1)
    ib = (b.reshape(-1) * bins).floor().long().clamp(0, bins - 1)
    flat = torch.bincount(ia * bins + ib, minlength=bins * bins)
    return flat.reshape(bins, bins)


class Downsample2(nn.Module):
    """Halve spatial size with a learned stride-2 3x3 conv; channels double."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(
            channels, 2 * channels, 3, stride=2, padding=1, padding_mode="replicate"
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise ValueError(f"downsample needs even spatial dims, got {h}x{w}")
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        y = self.conv(x)
        return y.squeeze(0) if squeeze else y


class Upsample2(nn.Module):
    """Double spatial size with nearest-neighbor repeat + 3x3 conv; channels halve."""

    def __init__(self, channels: int):
        super().__init__()
        if channels % 2:
            raise ValueError(f"upsample needs an even channel count, got {channels}")
        self.conv = nn.Conv2d(
            channels, channels // 2, 3, padding=1, padding_mode="replicate"
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        up = x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)
        y = self.conv(up)
        return y.squeeze(0) if squeeze else y


def leaky_relu(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, negative_slope=LEAKY_SLOPE)
