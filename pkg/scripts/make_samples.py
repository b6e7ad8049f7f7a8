#!/usr/bin/env python3
"""Regenerate the bundled synthetic sample pairs under assets/samples/.

Three 96x96 infrared/visible pairs with simple geometry: the infrared
channel carries bright "hot" regions on a dim background, the visible
channel carries color gradients and texture.  Fully deterministic, so the
committed PNGs can always be reproduced bit-for-bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

SIZE = 96
OUT = Path(__file__).resolve().parent.parent / "assets" / "samples"


def _grid() -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    return ys / (SIZE - 1), xs / (SIZE - 1)


def _disk(ys, xs, cy, cx, r, soft=0.02):
    d = np.hypot(ys - cy, xs - cx)
    return np.clip((r - d) / soft, 0.0, 1.0)


def _rect(ys, xs, y0, y1, x0, x1):
    return ((ys >= y0) & (ys < y1) & (xs >= x0) & (xs < x1)).astype(np.float64)


def scene_street():
    ys, xs = _grid()
    ir = 0.15 + 0.1 * ys
    ir += 0.7 * _disk(ys, xs, 0.35, 0.3, 0.12)          # pedestrian
    ir += 0.55 * _disk(ys, xs, 0.4, 0.75, 0.08)         # second figure
    ir += 0.25 * _rect(ys, xs, 0.7, 0.85, 0.1, 0.9)     # warm road strip
    vi_r = 0.3 + 0.5 * xs + 0.15 * np.sin(10 * np.pi * ys)
    vi_g = 0.35 + 0.3 * (1 - ys)
    vi_b = 0.5 + 0.3 * _rect(ys, xs, 0.0, 0.45, 0.55, 1.0)
    vi = np.stack([vi_r, vi_g, vi_b])
    vi += 0.2 * _rect(ys, xs, 0.55, 0.65, 0.0, 1.0)     # bright horizontal band
    return ir, vi


def scene_forest():
    ys, xs = _grid()
    ir = 0.1 + 0.05 * np.sin(6 * np.pi * xs) * np.sin(6 * np.pi * ys)
    ir += 0.8 * _disk(ys, xs, 0.6, 0.5, 0.15)           # campfire
    ir += 0.3 * _disk(ys, xs, 0.25, 0.2, 0.1)
    tree = _rect(ys, xs, 0.0, 0.8, 0.44, 0.52)
    vi_r = 0.25 + 0.2 * np.cos(8 * np.pi * xs) ** 2
    vi_g = 0.45 + 0.3 * (1 - ys) - 0.25 * tree
    vi_b = 0.2 + 0.15 * ys
    vi = np.stack([vi_r, vi_g, vi_b]) + 0.3 * tree
    return ir, vi


def scene_harbor():
    ys, xs = _grid()
    ir = 0.2 + 0.25 * np.exp(-((ys - 0.5) ** 2) / 0.08)
    ir += 0.6 * _rect(ys, xs, 0.3, 0.5, 0.6, 0.9)       # warm engine block
    ir += 0.5 * _disk(ys, xs, 0.75, 0.25, 0.1)
    waves = 0.1 * np.sin(14 * np.pi * ys + 4 * np.pi * xs)
    vi_r = 0.3 + 0.2 * xs + waves
    vi_g = 0.4 + 0.2 * ys + waves
    vi_b = 0.55 + 0.25 * (1 - ys) + waves
    vi = np.stack([vi_r, vi_g, vi_b])
    vi[:, (ys < 0.25) & (xs > 0.4)] *= 0.6              # dark superstructure
    return ir, vi


def save_gray(arr: np.ndarray, path: Path) -> None:
    q = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q, mode="L").save(path)


def save_rgb(arr: np.ndarray, path: Path) -> None:
    q = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path)


def main() -> None:
    scenes = {"street": scene_street, "forest": scene_forest, "harbor": scene_harbor}
    for name, fn in scenes.items():
        ir, vi = fn()
        save_gray(ir, OUT / "ir" / f"{name}.png")
        save_rgb(vi, OUT / "vi" / f"{name}.png")
    print(f"wrote {len(scenes)} pairs under {OUT}")


if __name__ == "__main__":
    main()
