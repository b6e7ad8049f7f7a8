"""Command-line interface.

Subcommands cover the full workflow:

* ``prepare``  — build a dataset manifest from paired directories
* ``degrade``  — synthesize degraded copies plus a manifest with prompts
* ``train``    — run the trainer on a manifest
* ``fuse``     — fuse pairs with a trained checkpoint
* ``eval``     — score fused images against their sources

Every command exits 0 on success and 1 with a message on stderr on
failure, writes only under its ``--out`` location, and is deterministic
for fixed seeds and inputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from . import data as dio
from .checkpoint import load_model
from .core import NetworkConfig, derive_seed
from .degrade import DegradeSpec, degrade_ir, degrade_vi
from .imgproc import ycbcr_to_rgb
from .metrics import MetricReport, compute_metrics
from .network import VARIANTS
from .prompts import (
    IR_MODES,
    VI_MODES,
    PromptTemplate,
    get_encoder,
    render_prompt,
)
from .train import TrainConfig, fit, read_config_file, validate_train_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptfuse",
        description="Prompt-conditioned infrared/visible image fusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build a manifest from paired directories")
    p.add_argument("--ir-dir", required=True)
    p.add_argument("--vi-dir", required=True)
    p.add_argument("--ir-ref-dir")
    p.add_argument("--vi-ref-dir")
    p.add_argument("--out", required=True, help="manifest path (.jsonl)")
    p.add_argument("--min-size", type=int, default=96)

    p = sub.add_parser("degrade", help="write degraded copies of a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ir-mode", choices=IR_MODES, default="none")
    p.add_argument("--vi-mode", choices=VI_MODES, default="none")
    p.add_argument("--severity", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="kv config file with net./train. keys")
    p.add_argument("--seed", type=int, help="override both init and data seeds")
    p.add_argument("--ablation", choices=VARIANTS)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--encoder-table", help="npz prompt-embedding table")

    p = sub.add_parser("fuse", help="fuse pairs with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ir", required=True, help="infrared image or directory")
    p.add_argument("--vi", required=True, help="visible image or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prompt-ir", help="explicit infrared prompt text")
    p.add_argument("--prompt-vi", help="explicit visible prompt text")
    p.add_argument("--prompt-auto", help="manifest to read per-pair prompts from")
    p.add_argument("--encoder-table", help="npz prompt-embedding table")

    p = sub.add_parser("eval", help="score fused images against their sources")
    p.add_argument("--fused-dir", required=True)
    p.add_argument("--ir-dir", required=True)
    p.add_argument("--vi-dir", required=True)
    p.add_argument("--out", required=True, help="output directory for reports")

    return parser


def cmd_prepare(args: argparse.Namespace) -> int:
    manifest, warnings = dio.build_manifest(
        args.ir_dir,
        args.vi_dir,
        args.ir_ref_dir,
        args.vi_ref_dir,
        min_size=args.min_size,
    )
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    dio.save_manifest(manifest, args.out)
    print(f"wrote {len(manifest.records)} record(s) to {args.out}")
    return 0


def cmd_degrade(args: argparse.Namespace) -> int:
    manifest = dio.load_manifest(args.manifest)
    spec = DegradeSpec(
        ir_mode=args.ir_mode,
        vi_mode=args.vi_mode,
        severity=args.severity,
        seed=args.seed,
    )
    out_dir = Path(args.out)
    prompt = render_prompt(PromptTemplate(ir_mode=spec.ir_mode, vi_mode=spec.vi_mode))
    out_records = []
    for rec in manifest.records:
        ir = dio.load_image(manifest.resolve(rec.ir))
        vi = dio.load_image(manifest.resolve(rec.vi))
        ir_deg = degrade_ir(
            ir, spec.ir_mode, spec.severity, derive_seed(spec.seed, "ir", rec.name)
        )
        vi_deg = degrade_vi(
            vi, spec.vi_mode, spec.severity, derive_seed(spec.seed, "vi", rec.name)
        )
        ir_path = out_dir / "ir" / f"{rec.name}.png"
        vi_path = out_dir / "vi" / f"{rec.name}.png"
        dio.save_image(ir_deg, ir_path)
        dio.save_image(vi_deg, vi_path)
        out_records.append(
            dio.ManifestRecord(
                name=rec.name,
                ir=str(ir_path),
                vi=str(vi_path),
                ir_ref=str(manifest.resolve(rec.ir)),
                vi_ref=str(manifest.resolve(rec.vi)),
                prompt_ir=prompt,
                prompt_vi=prompt,
                degrade={
                    "ir_mode": spec.ir_mode,
                    "vi_mode": spec.vi_mode,
                    "severity": spec.severity,
                    "seed": spec.seed,
                },
            )
        )
    out_manifest = out_dir / "manifest.jsonl"
    dio.save_manifest(dio.Manifest(root=Path.cwd(), records=out_records), out_manifest)
    print(f"wrote {len(out_records)} degraded pair(s) under {out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    manifest = dio.load_manifest(args.manifest)
    if args.config:
        net_cfg, train_cfg = read_config_file(args.config)
    else:
        net_cfg, train_cfg = NetworkConfig(), TrainConfig()
    if args.seed is not None:
        net_cfg.seed = args.seed
        train_cfg.seed = args.seed
    if args.ablation is not None:
        train_cfg.ablation = args.ablation
    validate_train_config(train_cfg)
    encoder = get_encoder(
        net_cfg.prompt_dim, table_path=args.encoder_table, seed=net_cfg.seed
    )
    result = fit(
        manifest,
        net_cfg,
        train_cfg,
        args.out,
        resume_from=args.resume,
        encoder=encoder,
    )
    final = result.reports[-1].total if result.reports else float("nan")
    print(
        f"trained {len(result.reports)} step(s); final total loss {final:.6f}; "
        f"checkpoint at {result.checkpoint}"
    )
    return 0


def _collect_pairs(ir: Path, vi: Path) -> list[tuple[str, Path, Path]]:
    if ir.is_file() and vi.is_file():
        return [(ir.stem, ir, vi)]
    if ir.is_dir() and vi.is_dir():
        ir_map = dio.stem_map(ir)
        vi_map = dio.stem_map(vi)
        stems = sorted(set(ir_map) & set(vi_map))
        if not stems:
            raise ValueError("no matching stems between --ir and --vi directories")
        return [(s, ir_map[s], vi_map[s]) for s in stems]
    raise ValueError("--ir and --vi must both be files or both be directories")


def cmd_fuse(args: argparse.Namespace) -> int:
    net, _meta, _rest = load_model(args.checkpoint)
    encoder = get_encoder(
        net.cfg.prompt_dim, table_path=args.encoder_table, seed=net.cfg.seed
    )
    pairs = _collect_pairs(Path(args.ir), Path(args.vi))

    default_prompt = render_prompt(PromptTemplate())
    per_name: dict[str, tuple[str, str]] = {}
    if args.prompt_auto:
        manifest = dio.load_manifest(args.prompt_auto)
        per_name = {r.name: (r.prompt_ir, r.prompt_vi) for r in manifest.records}

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net.eval()
    for name, ir_path, vi_path in pairs:
        ir = dio.load_image(ir_path)
        vi = dio.load_image(vi_path)
        if ir.shape[0] != 1:
            raise ValueError(f"{ir_path}: infrared image must be grayscale")
        if vi.shape[0] != 3:
            raise ValueError(f"{vi_path}: visible image must be RGB")
        p_ir, p_vi = per_name.get(name, (default_prompt, default_prompt))
        if args.prompt_ir is not None:
            p_ir = args.prompt_ir
        if args.prompt_vi is not None:
            p_vi = args.prompt_vi
        with torch.no_grad():
            fused = net(ir, vi, p_ir, p_vi, encoder)
        dio.save_image(ycbcr_to_rgb(fused), out_dir / f"{name}.png")
    print(f"fused {len(pairs)} pair(s) into {out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    fused_map = dio.stem_map(Path(args.fused_dir))
    ir_map = dio.stem_map(Path(args.ir_dir))
    vi_map = dio.stem_map(Path(args.vi_dir))
    stems = sorted(set(fused_map) & set(ir_map) & set(vi_map))
    if not stems:
        raise ValueError("no stems common to fused/ir/vi directories")
    report = MetricReport()
    for stem in stems:
        fused = dio.load_image(fused_map[stem])
        ir = dio.load_image(ir_map[stem])
        vi = dio.load_image(vi_map[stem])
        report.add(stem, compute_metrics(fused, ir, vi))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "metrics.csv")
    report.write_json(out_dir / "metrics.json")
    agg = report.aggregate()
    summary = ", ".join(f"{k}={v:.4f}" for k, v in agg.items())
    print(f"evaluated {len(stems)} image(s): {summary}")
    return 0


_HANDLERS = {
    "prepare": cmd_prepare,
    "degrade": cmd_degrade,
    "train": cmd_train,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
