"""Image IO, paired-dataset manifests, patch cropping, and batching.

A manifest is a JSON-lines file, one record per registered ir/vi pair,
with paths stored relative to the manifest location.  Reference paths are
optional; when absent the degraded images double as their own references
(the clean-data training mode).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

from .core import FusionSample, derive_seed
from .prompts import PromptTemplate, render_prompt

_GRAY_MODES = {"L"}
_COLOR_MODES = {"RGB"}
_CONVERTIBLE = {"P": "RGB", "RGBA": "RGB", "LA": "L", "1": "L"}


def load_image(path: str | Path) -> torch.Tensor:
    """Decode an 8-bit image file to a float32 ``(C, H, W)`` tensor in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        mode = im.mode
        if mode in _CONVERTIBLE:
            im = im.convert(_CONVERTIBLE[mode])
            mode = im.mode
        if mode not in _GRAY_MODES | _COLOR_MODES:
            raise ValueError(f"{path}: unsupported image mode {mode!r} (need 8-bit)")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(arr.copy())


def save_image(img: torch.Tensor, path: str | Path) -> None:
    """Write a ``(1|3, H, W)`` tensor in [0, 1] as an 8-bit PNG/JPEG."""
    if img.dim() != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W), got {tuple(img.shape)}")
    arr = img.detach().cpu().clamp(0.0, 1.0).numpy()
    quantized = np.round(arr * 255.0).astype(np.uint8)
    if quantized.shape[0] == 1:
        im = Image.fromarray(quantized[0], mode="L")
    else:
        im = Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    im.save(path)


@dataclass
class ManifestRecord:
    """One ir/vi pair with optional clean references and the prompt pair."""

    name: str
    ir: str
    vi: str
    ir_ref: str | None = None
    vi_ref: str | None = None
    prompt_ir: str = render_prompt(PromptTemplate())
    prompt_vi: str = render_prompt(PromptTemplate())
    degrade: dict | None = None


@dataclass
class Manifest:
    root: Path
    records: list[ManifestRecord]

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p


_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


def stem_map(directory: str | Path) -> dict[str, Path]:
    """Map file stem -> path for every image directly inside ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    out: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in _IMAGE_SUFFIXES and p.is_file():
            if p.stem in out:
                raise ValueError(f"duplicate stem {p.stem!r} in {directory}")
            out[p.stem] = p
    return out


def build_manifest(
    ir_dir: str | Path,
    vi_dir: str | Path,
    ir_ref_dir: str | Path | None = None,
    vi_ref_dir: str | Path | None = None,
    min_size: int = 96,
) -> tuple[Manifest, list[str]]:
    """Pair up images across directories by file stem.

    Returns the manifest (rooted at the common parent of nothing in
    particular; paths are stored absolute until saved) plus a list of
    warnings for unmatched or undersized files.
    """
    ir_dir, vi_dir = Path(ir_dir), Path(vi_dir)
    for d in (ir_dir, vi_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    ir_map, vi_map = stem_map(ir_dir), stem_map(vi_dir)
    ref_ir_map = stem_map(ir_ref_dir) if ir_ref_dir else {}
    ref_vi_map = stem_map(vi_ref_dir) if vi_ref_dir else {}

    warnings: list[str] = []
    records: list[ManifestRecord] = []
    for stem in sorted(set(ir_map) | set(vi_map)):
        if stem not in ir_map or stem not in vi_map:
            side = "visible" if stem not in vi_map else "infrared"
            warnings.append(f"{stem}: no {side} image, skipped")
            continue
        ir_path, vi_path = ir_map[stem], vi_map[stem]
        with Image.open(ir_path) as im_ir, Image.open(vi_path) as im_vi:
            if im_ir.size != im_vi.size:
                warnings.append(
                    f"{stem}: size mismatch {im_ir.size} vs {im_vi.size}, skipped"
                )
                continue
            w, h = im_ir.size
        if h < min_size or w < min_size:
            warnings.append(f"{stem}: {w}x{h} smaller than {min_size}, skipped")
            continue
        rec = ManifestRecord(name=stem, ir=str(ir_path), vi=str(vi_path))
        if stem in ref_ir_map:
            rec.ir_ref = str(ref_ir_map[stem])
        if stem in ref_vi_map:
            rec.vi_ref = str(ref_vi_map[stem])
        records.append(rec)
    if not records:
        raise ValueError("no usable pairs found")
    return Manifest(root=Path.cwd(), records=records), warnings


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write JSON lines; paths become relative to the manifest location."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def rel(p: str | None) -> str | None:
        if p is None:
            return None
        full = manifest.resolve(p).resolve()
        try:
            return str(full.relative_to(base))
        except ValueError:
            return os.path.relpath(full, base)

    with open(path, "w") as fh:
        for rec in manifest.records:
            d = dataclasses.asdict(rec)
            for key in ("ir", "vi", "ir_ref", "vi_ref"):
                d[key] = rel(d[key])
            fh.write(json.dumps(d) + "\n")


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    known = {f.name for f in dataclasses.fields(ManifestRecord)}
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        d = json.loads(line)
        extra = set(d) - known
        if extra:
            raise ValueError(f"{path}:{ln}: unknown manifest fields {sorted(extra)}")
        records.append(ManifestRecord(**d))
    if not records:
        raise ValueError(f"{path}: empty manifest")
    manifest = Manifest(root=path.parent.resolve(), records=records)
    for rec in records:
        for key in ("ir", "vi", "ir_ref", "vi_ref"):
            p = getattr(rec, key)
            if p is not None and not manifest.resolve(p).is_file():
                raise FileNotFoundError(f"{path}: record {rec.name!r}: missing {p}")
    return manifest


def load_sample(manifest: Manifest, record: ManifestRecord) -> FusionSample:
    ir = load_image(manifest.resolve(record.ir))
    vi = load_image(manifest.resolve(record.vi))
    ir_ref = load_image(manifest.resolve(record.ir_ref)) if record.ir_ref else ir.clone()
    vi_ref = load_image(manifest.resolve(record.vi_ref)) if record.vi_ref else vi.clone()
    return FusionSample(
        ir=ir,
        vi=vi,
        ir_ref=ir_ref,
        vi_ref=vi_ref,
        prompt_ir=record.prompt_ir,
        prompt_vi=record.prompt_vi,
    )


def crop_patches(sample: FusionSample, size: int = 96, seed: int = 0) -> list[FusionSample]:
    """Cut a sample into aligned ``size``-square patches.

    Windows sit on a regular grid covering ``floor(H/size) * floor(W/size)``
    patches; the whole grid is shifted by a seeded offset inside the
    leftover margin, so patches stay disjoint but the coverage varies
    between epochs.  The same windows are applied to all four images.
    """
    h, w = sample.height, sample.width
    if h < size or w < size:
        raise ValueError(f"image {w}x{h} smaller than patch size {size}")
    ny, nx = h // size, w // size
    rng = np.random.default_rng(seed)
    dy = int(rng.integers(0, h - ny * size + 1))
    dx = int(rng.integers(0, w - nx * size + 1))
    patches = []
    for iy in range(ny):
        for ix in range(nx):
            y0, x0 = dy + iy * size, dx + ix * size
            win = (slice(None), slice(y0, y0 + size), slice(x0, x0 + size))
            patches.append(
                FusionSample(
                    ir=sample.ir[win].clone(),
                    vi=sample.vi[win].clone(),
                    ir_ref=sample.ir_ref[win].clone(),
                    vi_ref=sample.vi_ref[win].clone(),
                    prompt_ir=sample.prompt_ir,
                    prompt_vi=sample.prompt_vi,
                )
            )
    return patches


def epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    """Seeded permutation of ``range(n)`` for one epoch."""
    rng = np.random.default_rng(derive_seed(seed, "epoch-order", epoch))
    return [int(i) for i in rng.permutation(n)]


def batch_iter(
    manifest: Manifest, batch_size: int = 16, seed: int = 0, epoch: int = 0
) -> Iterator[list[FusionSample]]:
    """Yield shuffled batches of loaded samples; the final short batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not manifest.records:
        raise ValueError("empty manifest")
    order = epoch_order(len(manifest.records), seed, epoch)
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        yield [load_sample(manifest, manifest.records[i]) for i in chunk]
