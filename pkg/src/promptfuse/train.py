"""Training loop: batching, optimization, logging, checkpointing.

Everything is deterministic given the two seeds (network init seed in
``NetworkConfig``, data-order seed in ``TrainConfig``) and a fixed thread
count: epoch shuffles and crop jitter are pure functions of
``(seed, epoch, position)``, so a run resumed from an epoch-boundary
checkpoint replays exactly the batches the uninterrupted run would have
seen, and the loss stream continues bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_model, save_model
from .core import (
    ConfigError,
    FusionSample,
    LossWeights,
    NetworkConfig,
    derive_seed,
    parse_kv_text,
)
from .data import Manifest, crop_patches, epoch_order, load_sample
from .losses import LossReport, fusion_loss
from .network import VARIANTS, FusionNet, loss_variant_weights
from .prompts import PromptTemplate, TextEncoder, get_encoder, render_prompt

MODES = ("degradation_aware", "degradation_agnostic")
SCHEDULES = ("constant", "cosine")


class TrainingError(RuntimeError):
    """Raised when training cannot continue (for example non-finite loss)."""


@dataclass
class TrainConfig:
    learning_rate: float = 2.5e-4
    batch_size: int = 16
    epochs: int = 1
    patch_size: int = 96
    grad_clip: float = 1.0
    lr_schedule: str = "constant"
    mode: str = "degradation_aware"
    ablation: str = "full"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = final only

    def to_kv(self) -> dict[str, str]:
        kv = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "loss_weights":
                kv["weight_intensity"] = repr(v.intensity)
                kv["weight_texture"] = repr(v.texture)
                kv["weight_color"] = repr(v.color)
            else:
                kv[f.name] = repr(v) if isinstance(v, float) else str(v)
        return kv

    @classmethod
    def from_kv(cls, kv: dict[str, str], strict: bool = True) -> "TrainConfig":
        base = cls()
        weights = {
            "weight_intensity": base.loss_weights.intensity,
            "weight_texture": base.loss_weights.texture,
            "weight_color": base.loss_weights.color,
        }
        kwargs: dict = {}
        leftover = dict(kv)
        for f in dataclasses.fields(cls):
            if f.name == "loss_weights":
                continue
            if f.name in leftover:
                raw = leftover.pop(f.name)
                if f.type == "int":
                    kwargs[f.name] = int(raw)
                elif f.type == "float":
                    kwargs[f.name] = float(raw)
                else:
                    kwargs[f.name] = raw
            elif strict:
                raise ConfigError(f"missing train config key: {f.name}")
        for key in list(leftover):
            if key in weights:
                weights[key] = float(leftover.pop(key))
        if leftover:
            raise ConfigError(f"unknown train config keys: {sorted(leftover)}")
        kwargs["loss_weights"] = LossWeights(
            weights["weight_intensity"],
            weights["weight_texture"],
            weights["weight_color"],
        )
        return cls(**kwargs)


def validate_train_config(cfg: TrainConfig) -> None:
    if not (cfg.learning_rate > 0):
        raise ConfigError(f"learning_rate must be > 0, got {cfg.learning_rate}")
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.patch_size < 8 or cfg.patch_size % 8:
        raise ConfigError(
            f"patch_size must be a positive multiple of 8, got {cfg.patch_size}"
        )
    if cfg.grad_clip < 0:
        raise ConfigError(f"grad_clip must be >= 0 (0 disables), got {cfg.grad_clip}")
    if cfg.lr_schedule not in SCHEDULES:
        raise ConfigError(f"lr_schedule must be one of {SCHEDULES}")
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if cfg.ablation not in VARIANTS:
        raise ConfigError(f"ablation must be one of {VARIANTS}")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.checkpoint_every < 0:
        raise ConfigError("checkpoint_every must be >= 0")


def make_optimizer(net: FusionNet, learning_rate: float) -> torch.optim.Adam:
    return torch.optim.Adam(
        net.parameters(), lr=learning_rate, betas=(0.9, 0.999), eps=1e-8
    )


def lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate at global step ``step`` (0-based) of ``total_steps``."""
    if cfg.lr_schedule == "constant" or total_steps <= 1:
        return cfg.learning_rate
    frac = min(step / max(total_steps - 1, 1), 1.0)
    return 0.5 * cfg.learning_rate * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainState:
    """Everything a resumed run needs: model, optimizer moments, counters,
    and the last epoch's mean loss components."""

    net: FusionNet
    optimizer: torch.optim.Optimizer
    step: int = 0
    epoch: int = 0  # completed epochs
    running: dict[str, float] = field(default_factory=dict)


def _neutralize(sample: FusionSample) -> FusionSample:
    """Degradation-agnostic view: constant prompt, inputs as own references."""
    neutral = render_prompt(PromptTemplate())
    return FusionSample(
        ir=sample.ir,
        vi=sample.vi,
        ir_ref=sample.ir,
        vi_ref=sample.vi,
        prompt_ir=neutral,
        prompt_vi=neutral,
    )


def train_step(
    net: FusionNet,
    optimizer: torch.optim.Optimizer,
    batch: list[FusionSample],
    encoder: TextEncoder,
    weights: LossWeights,
    grad_clip: float = 1.0,
    lr: float | None = None,
) -> LossReport:
    """One gradient step on the mean loss of ``batch``.

    All samples in the batch must share one spatial size.  A non-finite
    loss aborts with the component values in the error message.
    """
    if not batch:
        raise ValueError("empty batch")
    shapes = {tuple(s.ir.shape) for s in batch}
    if len(shapes) != 1:
        raise ValueError(f"batch mixes image shapes: {sorted(shapes)}")
    ir = torch.stack([s.ir for s in batch])
    vi = torch.stack([s.vi for s in batch])
    ir_ref = torch.stack([s.ir_ref for s in batch])
    vi_ref = torch.stack([s.vi_ref for s in batch])
    prompts_ir = [s.prompt_ir for s in batch]
    prompts_vi = [s.prompt_vi for s in batch]

    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr

    fused = net(ir, vi, prompts_ir, prompts_vi, encoder)
    total, report = fusion_loss(fused, ir_ref, vi_ref, weights)
    if not math.isfinite(report.total):
        raise TrainingError(f"non-finite loss: {report.as_dict()}")
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(net.parameters(), grad_clip)
    optimizer.step()
    return report


# ---------------------------------------------------------------------------
# checkpointing


def _optimizer_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    opt_state = state.optimizer.state
    for name, p in state.net.named_parameters():
        if p in opt_state and "exp_avg" in opt_state[p]:
            arrays[f"adam_m/{name}"] = opt_state[p]["exp_avg"].detach().cpu().numpy()
            arrays[f"adam_v/{name}"] = opt_state[p]["exp_avg_sq"].detach().cpu().numpy()
    return arrays


def save_checkpoint(state: TrainState, cfg: TrainConfig, path: str | Path) -> None:
    """Write model weights, Adam moments, counters, and the train config."""
    meta = {f"train.{k}": v for k, v in cfg.to_kv().items()}
    meta["train.step"] = str(state.step)
    meta["train.epoch"] = str(state.epoch)
    for key in sorted(state.running):
        meta[f"train.running_{key}"] = repr(float(state.running[key]))
    save_model(state.net, path, meta, _optimizer_arrays(state))


def load_checkpoint(path: str | Path) -> tuple[TrainState, TrainConfig]:
    """Rebuild a :class:`TrainState` (and the saved config) from a file."""
    net, meta, rest = load_model(path)
    train_kv = {k[6:]: v for k, v in meta.items() if k.startswith("train.")}
    step = int(train_kv.pop("step", "0"))
    epoch = int(train_kv.pop("epoch", "0"))
    running = {}
    for key in [k for k in train_kv if k.startswith("running_")]:
        running[key[len("running_") :]] = float(train_kv.pop(key))
    cfg = TrainConfig.from_kv(train_kv, strict=False)
    optimizer = make_optimizer(net, cfg.learning_rate)
    if step > 0:
        for name, p in net.named_parameters():
            try:
                m = rest[f"adam_m/{name}"]
                v = rest[f"adam_v/{name}"]
            except KeyError:
                raise CheckpointError(
                    f"checkpoint lacks optimizer state for {name}"
                ) from None
            optimizer.state[p] = {
                "step": torch.tensor(float(step)),
                "exp_avg": torch.from_numpy(m.copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(v.copy()).to(p.dtype),
            }
    return TrainState(net, optimizer, step, epoch, running), cfg


@dataclass
class FitResult:
    checkpoint: Path
    log: Path
    reports: list[LossReport]


def fit(
    manifest: Manifest,
    net_cfg: NetworkConfig,
    cfg: TrainConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    encoder: TextEncoder | None = None,
) -> FitResult:
    """Train on all patches of the manifest for ``cfg.epochs`` epochs.

    Per epoch, every sample is cropped into grid-aligned patches with
    seeded jitter, the patch list is shuffled, and each batch of
    ``cfg.batch_size`` patches takes one gradient step.  Checkpoints land
    at epoch boundaries (every ``checkpoint_every`` epochs plus a final
    one); ``resume_from`` continues a run from such a file.  Under the
    constant schedule a resumed run's loss stream continues the original
    one exactly; the cosine schedule additionally needs the same total
    epoch count in both runs.
    """
    validate_train_config(cfg)
    if not manifest.records:
        raise ValueError("empty manifest")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if encoder is None:
        encoder = get_encoder(net_cfg.prompt_dim, seed=net_cfg.seed)

    weights = loss_variant_weights(cfg.ablation, cfg.loss_weights)

    if resume_from is not None:
        state, _saved_cfg = load_checkpoint(resume_from)
        if state.net.cfg != net_cfg or state.net.variant != cfg.ablation:
            raise CheckpointError(
                "checkpoint network config does not match the requested run"
            )
    else:
        net = FusionNet(net_cfg, variant=cfg.ablation)
        state = TrainState(net, make_optimizer(net, cfg.learning_rate))

    # count patches once so the cosine schedule and a resumed run agree on
    # the global step space
    total_patches = 0
    for record in manifest.records:
        sample = load_sample(manifest, record)
        total_patches += (sample.height // cfg.patch_size) * (
            sample.width // cfg.patch_size
        )
    if total_patches == 0:
        raise ValueError(
            f"no sample is at least {cfg.patch_size}x{cfg.patch_size}; "
            "reduce patch_size"
        )
    steps_per_epoch = math.ceil(total_patches / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs

    log_path = out_dir / "train_log.jsonl"
    reports: list[LossReport] = []
    final_path = out_dir / "checkpoint_final.ckpt"

    with open(log_path, "a" if resume_from is not None else "w") as log:
        for epoch in range(state.epoch, cfg.epochs):
            patches: list[FusionSample] = []
            for idx, record in enumerate(manifest.records):
                sample = load_sample(manifest, record)
                if cfg.mode == "degradation_agnostic":
                    sample = _neutralize(sample)
                patches.extend(
                    crop_patches(
                        sample,
                        cfg.patch_size,
                        derive_seed(cfg.seed, "crop", epoch, idx),
                    )
                )
            order = epoch_order(len(patches), cfg.seed, epoch)
            epoch_reports: list[LossReport] = []
            for start in range(0, len(order), cfg.batch_size):
                chunk = [patches[i] for i in order[start : start + cfg.batch_size]]
                lr = lr_at(cfg, state.step, total_steps)
                t0 = time.monotonic()
                report = train_step(
                    state.net, state.optimizer, chunk, encoder, weights,
                    cfg.grad_clip, lr,
                )
                wall_ms = (time.monotonic() - t0) * 1000.0
                state.step += 1
                reports.append(report)
                epoch_reports.append(report)
                log.write(
                    json.dumps(
                        {
                            "step": state.step,
                            "epoch": epoch,
                            **report.as_dict(),
                            "lr": lr,
                            "wall_ms": round(wall_ms, 3),
                        }
                    )
                    + "\n"
                )
            state.epoch = epoch + 1
            state.running = {
                key: float(np.mean([r.as_dict()[key] for r in epoch_reports]))
                for key in ("intensity", "texture", "color", "total")
            }
            if cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(
                    state, cfg, out_dir / f"checkpoint_epoch{state.epoch:04d}.ckpt"
                )
        save_checkpoint(state, cfg, final_path)

    return FitResult(checkpoint=final_path, log=log_path, reports=reports)


def read_config_file(path: str | Path) -> tuple[NetworkConfig, TrainConfig]:
    """Parse a combined ``net.x = v`` / ``train.x = v`` config file.

    Missing keys fall back to defaults; unknown keys are rejected.
    """
    kv = parse_kv_text(Path(path).read_text())
    net_kv, train_kv = {}, {}
    for key, value in kv.items():
        if key.startswith("net."):
            net_kv[key[4:]] = value
        elif key.startswith("train."):
            train_kv[key[6:]] = value
        else:
            raise ConfigError(f"config keys must start with net. or train.: {key!r}")
    merged = {}
    for line in NetworkConfig().to_text().splitlines():
        k, _, v = line.partition(" = ")
        merged[k] = v
    unknown = set(net_kv) - set(merged)
    if unknown:
        raise ConfigError(f"unknown net config keys: {sorted(unknown)}")
    merged.update(net_kv)
    net_cfg = NetworkConfig.from_kv(merged)
    train_cfg = TrainConfig.from_kv(train_kv, strict=False)
    return net_cfg, train_cfg
