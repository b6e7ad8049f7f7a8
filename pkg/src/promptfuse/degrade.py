"""Synthetic degradations for building paired training data.

Infrared images can lose contrast or pick up sensor noise; visible images
can be under- or over-exposed.  Every op takes a severity in ``[0, 1]``
where 0 is a bit-exact identity, and any stochastic part (noise) is drawn
from an explicit seed so the same call always produces the same image.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .core import FusionSample, derive_seed
from .prompts import IR_MODES, VI_MODES, PromptTemplate, render_prompt


@dataclass(frozen=True)
class DegradeSpec:
    """Which degradation hits each modality, how hard, and the noise seed."""

    ir_mode: str = "none"
    vi_mode: str = "none"
    severity: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.ir_mode not in IR_MODES:
            raise ValueError(f"ir_mode must be one of {IR_MODES}, got {self.ir_mode!r}")
        if self.vi_mode not in VI_MODES:
            raise ValueError(f"vi_mode must be one of {VI_MODES}, got {self.vi_mode!r}")
        if not (0.0 <= self.severity <= 1.0):
            raise ValueError(f"severity must be in [0, 1], got {self.severity}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


def _check_severity(severity: float) -> None:
    if not (0.0 <= severity <= 1.0):
        raise ValueError(f"severity must be in [0, 1], got {severity}")


def _noise(img: torch.Tensor, sigma: float, seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return sigma * torch.randn(img.shape, generator=gen, dtype=img.dtype)


def apply_low_light(img: torch.Tensor, severity: float, seed: int = 0) -> torch.Tensor:
    """Darken: gamma lift ``x**(1 + 1.5 s)``, gain ``1 - 0.6 s``, additive
    read noise with sigma ``0.02 s``; result clamped to ``[0, 1]``."""
    _check_severity(severity)
    if severity == 0.0:
        return img.clone()
    gamma = 1.0 + 1.5 * severity
    gain = 1.0 - 0.6 * severity
    out = gain * img.clamp(min=0.0) ** gamma + _noise(img, 0.02 * severity, seed)
    return out.clamp(0.0, 1.0)


def apply_overexposure(img: torch.Tensor, severity: float, seed: int = 0) -> torch.Tensor:
    """Brighten with gain ``1 + 2 s`` and clamp; highlights saturate."""
    _check_severity(severity)
    if severity == 0.0:
        return img.clone()
    return ((1.0 + 2.0 * severity) * img).clamp(0.0, 1.0)


def apply_low_contrast(img: torch.Tensor, severity: float, seed: int = 0) -> torch.Tensor:
    """Pull values toward the image mean by factor ``1 - 0.8 s``.

    No clamp: the result stays inside the original value range, and the
    standard deviation scales by exactly ``1 - 0.8 s``.
    """
    _check_severity(severity)
    if severity == 0.0:
        return img.clone()
    mean = img.mean()
    return mean + (1.0 - 0.8 * severity) * (img - mean)


def apply_noise(img: torch.Tensor, severity: float, seed: int = 0) -> torch.Tensor:
    """Additive Gaussian noise with sigma ``0.1 s``, clamped to ``[0, 1]``."""
    _check_severity(severity)
    if severity == 0.0:
        return img.clone()
    return (img + _noise(img, 0.1 * severity, seed)).clamp(0.0, 1.0)


_IR_OPS = {"none": None, "low_contrast": apply_low_contrast, "noise": apply_noise}
_VI_OPS = {"none": None, "low_light": apply_low_light, "overexposure": apply_overexposure}


def degrade_ir(img: torch.Tensor, mode: str, severity: float, seed: int = 0) -> torch.Tensor:
    if mode not in _IR_OPS:
        raise ValueError(f"ir_mode must be one of {IR_MODES}, got {mode!r}")
    op = _IR_OPS[mode]
    return img.clone() if op is None else op(img, severity, seed)


def degrade_vi(img: torch.Tensor, mode: str, severity: float, seed: int = 0) -> torch.Tensor:
    if mode not in _VI_OPS:
        raise ValueError(f"vi_mode must be one of {VI_MODES}, got {mode!r}")
    op = _VI_OPS[mode]
    return img.clone() if op is None else op(img, severity, seed)


def make_sample(
    ir_clean: torch.Tensor, vi_clean: torch.Tensor, spec: DegradeSpec
) -> FusionSample:
    """Build a training sample: degraded inputs, clean references, and the
    prompt sentences matching the degradation pair."""
    ir = degrade_ir(ir_clean, spec.ir_mode, spec.severity, derive_seed(spec.seed, "ir"))
    vi = degrade_vi(vi_clean, spec.vi_mode, spec.severity, derive_seed(spec.seed, "vi"))
    template = PromptTemplate(ir_mode=spec.ir_mode, vi_mode=spec.vi_mode)
    prompt = render_prompt(template)
    # the sentence names both degradations, so both modalities share it
    return FusionSample(
        ir=ir,
        vi=vi,
        ir_ref=ir_clean.clone(),
        vi_ref=vi_clean.clone(),
        prompt_ir=prompt,
        prompt_vi=prompt,
    )
