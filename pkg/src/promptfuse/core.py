"""Shared value types, configuration, and validation helpers.

Conventions used across the package:

* Images are ``torch.Tensor`` of shape ``(C, H, W)`` (or ``(N, C, H, W)``
  when batched), float, with values in ``[0, 1]``.  Infrared images have
  ``C == 1``, visible images ``C == 3``.
* Fused network outputs are ``(3, H, W)`` tensors whose channels are
  ``(Y, Cb, Cr)`` in full-range BT.601.
* All randomness is drawn from explicit seeds; :func:`derive_seed` maps a
  base seed plus string tags to independent sub-seeds so that the same
  quantity is reproducible across processes.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

import torch

LEAKY_SLOPE = 0.2  # negative slope shared by every LeakyReLU in the network


class ConfigError(ValueError):
    """Raised when a configuration value is out of its documented range."""


def derive_seed(*parts: object) -> int:
    """Map a tuple of hashable parts to a stable 63-bit seed.

    Stable across processes and platforms (unlike ``hash``), so per-epoch
    shuffles, crop jitter and synthetic noise can be reproduced exactly
    from ``(base_seed, tags...)``.
    """
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & (2**63 - 1)


def image_tensor(data, channels: int | None = None) -> torch.Tensor:
    """Validate ``data`` as an image tensor and return it.

    Accepts anything ``torch.as_tensor`` accepts.  Checks shape
    ``(C, H, W)`` with ``C`` in ``{1, 3}`` (or exactly ``channels`` when
    given), a floating dtype, finite values, and range ``[0, 1]``.
    """
    t = torch.as_tensor(data)
    if not torch.is_floating_point(t):
        t = t.to(torch.float32)
    if t.dim() != 3:
        raise ValueError(f"image tensor must be (C, H, W), got shape {tuple(t.shape)}")
    c = t.shape[0]
    if channels is not None:
        if c != channels:
            raise ValueError(f"expected {channels} channel(s), got {c}")
    elif c not in (1, 3):
        raise ValueError(f"image tensor must have 1 or 3 channels, got {c}")
    if not torch.isfinite(t).all():
        raise ValueError("image tensor contains non-finite values")
    if t.numel() and (t.min().item() < 0.0 or t.max().item() > 1.0):
        raise ValueError("image tensor values must lie in [0, 1]")
    return t


@dataclass(frozen=True)
class PromptEmbedding:
    """A fixed-length embedding of a degradation prompt.

    ``vector`` is a 1-D tensor; ``text`` is the prompt it came from.
    Embeddings are constants from the network's point of view: they carry
    no gradient and are produced outside the trainable graph.
    """

    vector: torch.Tensor
    text: str

    def __post_init__(self) -> None:
        if self.vector.dim() != 1:
            raise ValueError("embedding vector must be 1-D")
        if not torch.isfinite(self.vector).all():
            raise ValueError("embedding vector contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class GuidanceParams:
    """Per-channel affine guidance: a multiplicative ``scale`` and additive
    ``shift``, each with trailing dimension equal to the channel count."""

    scale: torch.Tensor
    shift: torch.Tensor

    def __post_init__(self) -> None:
        if self.scale.shape != self.shift.shape:
            raise ValueError(
                f"scale shape {tuple(self.scale.shape)} != shift shape "
                f"{tuple(self.shift.shape)}"
            )
        if self.scale.dim() not in (1, 2):
            raise ValueError("guidance params must be (C,) or (N, C)")

    @property
    def channels(self) -> int:
        return self.scale.shape[-1]


@dataclass
class NetworkConfig:
    """Hyperparameters of the fusion network.

    ``num_scales`` is fixed at 4: the channel plan, the down/upsampling
    ladder and the checkpoint layout all assume a four-level pyramid.
    """

    base_channels: int = 32
    num_scales: int = 4
    transformer_depth: int = 2
    msconv_depth: int = 3
    msconv_kernels: tuple[int, ...] = (1, 3, 5)
    prompt_dim: int = 512
    attention_heads: int = 4
    seed: int = 0

    def channel_plan(self) -> tuple[int, ...]:
        """Channel width per pyramid level, shallowest first."""
        return tuple(self.base_channels * 2**i for i in range(self.num_scales))

    # -- flat text serialization ------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        kv = parse_kv_text(text)
        return cls.from_kv(kv)

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "NetworkConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in kv:
                raise ConfigError(f"missing config key: {f.name}")
            raw = kv[f.name]
            if f.name == "msconv_kernels":
                kwargs[f.name] = tuple(int(x) for x in raw.split(","))
            else:
                kwargs[f.name] = int(raw)
        extra = set(kv) - {f.name for f in dataclasses.fields(cls)}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**kwargs)


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines (blank lines and ``#`` comments ignored)."""
    out: dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def validate_config(cfg: NetworkConfig) -> None:
    """Raise :class:`ConfigError` on any out-of-range hyperparameter."""
    if cfg.num_scales != 4:
        raise ConfigError(f"num_scales must be 4, got {cfg.num_scales}")
    if cfg.base_channels < 4:
        raise ConfigError(f"base_channels must be >= 4, got {cfg.base_channels}")
    if cfg.prompt_dim < 8:
        raise ConfigError(f"prompt_dim must be >= 8, got {cfg.prompt_dim}")
    if cfg.transformer_depth < 1:
        raise ConfigError("transformer_depth must be >= 1")
    if cfg.msconv_depth < 1:
        raise ConfigError("msconv_depth must be >= 1")
    if not cfg.msconv_kernels or any(k < 1 or k % 2 == 0 for k in cfg.msconv_kernels):
        raise ConfigError("msconv_kernels must be odd and positive")
    if cfg.attention_heads < 1:
        raise ConfigError("attention_heads must be >= 1")
    if cfg.base_channels % cfg.attention_heads != 0:
        raise ConfigError(
            f"attention_heads ({cfg.attention_heads}) must divide "
            f"base_channels ({cfg.base_channels})"
        )
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three training loss terms."""

    intensity: float = 10.0
    texture: float = 12.0
    color: float = 10.0

    def __post_init__(self) -> None:
        for name in ("intensity", "texture", "color"):
            v = getattr(self, name)
            if not (v >= 0.0):
                raise ConfigError(f"loss weight {name} must be >= 0, got {v}")


@dataclass
class FusionSample:
    """One training record: degraded inputs, clean references, prompts.

    For clean data the references may alias the inputs.  All four images
    share the same spatial size; ``ir_*`` are single-channel, ``vi_*``
    three-channel RGB.
    """

    ir: torch.Tensor
    vi: torch.Tensor
    ir_ref: torch.Tensor
    vi_ref: torch.Tensor
    prompt_ir: str
    prompt_vi: str

    def __post_init__(self) -> None:
        self.ir = image_tensor(self.ir, channels=1)
        self.vi = image_tensor(self.vi, channels=3)
        self.ir_ref = image_tensor(self.ir_ref, channels=1)
        self.vi_ref = image_tensor(self.vi_ref, channels=3)
        hw = self.ir.shape[1:]
        for name in ("vi", "ir_ref", "vi_ref"):
            other = getattr(self, name).shape[1:]
            if other != hw:
                raise ValueError(
                    f"{name} spatial size {tuple(other)} != ir size {tuple(hw)}"
                )

    @property
    def height(self) -> int:
        return self.ir.shape[1]

    @property
    def width(self) -> int:
        return self.ir.shape[2]


def check_network_input(ir: torch.Tensor, vi: torch.Tensor) -> None:
    """Validate a (possibly batched) ir/vi pair for a full network pass."""
    if ir.dim() != vi.dim() or ir.dim() not in (3, 4):
        raise ValueError(
            f"ir and vi must both be (C,H,W) or (N,C,H,W); got "
            f"{tuple(ir.shape)} and {tuple(vi.shape)}"
        )
    if ir.shape[-3] != 1:
        raise ValueError(f"ir must have 1 channel, got {ir.shape[-3]}")
    if vi.shape[-3] != 3:
        raise ValueError(f"vi must have 3 channels, got {vi.shape[-3]}")
    if ir.shape[-2:] != vi.shape[-2:]:
        raise ValueError(
            f"ir spatial size {tuple(ir.shape[-2:])} != vi size {tuple(vi.shape[-2:])}"
        )
    h, w = ir.shape[-2:]
    if h < 8 or w < 8 or h % 8 or w % 8:
        raise ValueError(
            f"network input size must be a multiple of 8 and at least 8, got {h}x{w}"
        )
