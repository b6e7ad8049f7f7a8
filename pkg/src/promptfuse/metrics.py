"""Fusion quality metrics.

All metrics take single-channel images (torch tensors or arrays, ``(H, W)``
or ``(1, H, W)``; 3-channel input is reduced to luminance first) with
values in ``[0, 1]`` and compute in float64 numpy.  No-reference metrics
(AG, EI, SD, SF) score the fused image alone; MI and Qabf additionally
take both source images.

Spatial frequency and average gradient use forward differences and divide
only by the number of defined differences, so a 0/1 checkerboard scores
``SF = sqrt(2)`` exactly.  Mutual information is computed in bits from a
256-bin joint histogram over ``[0, 1]``; an image against itself scores
exactly its own entropy from each source term.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

METRIC_NAMES = ("AG", "EI", "SD", "SF", "MI", "Qabf")

# Qabf sigmoid constants: overall scale, slope/offset for the strength
# term, slope/offset for the orientation term.
QABF_SCALE = 1.0
QABF_STRENGTH_SLOPE = -10.0
QABF_STRENGTH_OFFSET = 0.5
QABF_ORIENT_SLOPE = -20.0
QABF_ORIENT_OFFSET = 0.75

_LUMA = (0.299, 0.587, 0.114)


def _as_gray(img) -> np.ndarray:
    """Coerce input to a float64 ``(H, W)`` array; RGB collapses to luminance."""
    if isinstance(img, torch.Tensor):
        arr = img.detach().cpu().numpy()
    else:
        arr = np.asarray(img)
    arr = arr.astype(np.float64)
    if arr.ndim == 3:
        if arr.shape[0] == 1:
            arr = arr[0]
        elif arr.shape[0] == 3:
            arr = _LUMA[0] * arr[0] + _LUMA[1] * arr[1] + _LUMA[2] * arr[2]
        else:
            raise ValueError(f"expected 1 or 3 channels, got {arr.shape[0]}")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"image too small for metrics: {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    return arr


def _sobel_pair(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed Sobel responses with edge-replicated borders."""
    kx = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    ky = kx.T
    p = np.pad(x, 1, mode="edge")
    h, w = x.shape
    sx = np.zeros_like(x)
    sy = np.zeros_like(x)
    for dy in range(3):
        for dx in range(3):
            window = p[dy : dy + h, dx : dx + w]
            if kx[dy, dx]:
                sx += kx[dy, dx] * window
            if ky[dy, dx]:
                sy += ky[dy, dx] * window
    return sx, sy


def average_gradient(img) -> float:
    """Mean RMS of the two forward differences over the interior grid."""
    x = _as_gray(img)
    dx = x[:-1, 1:] - x[:-1, :-1]
    dy = x[1:, :-1] - x[:-1, :-1]
    return float(np.mean(np.sqrt((dx**2 + dy**2) / 2.0)))


def edge_intensity(img) -> float:
    """Mean Sobel gradient magnitude."""
    sx, sy = _sobel_pair(_as_gray(img))
    return float(np.mean(np.hypot(sx, sy)))


def std_dev(img) -> float:
    """Population standard deviation of pixel values."""
    return float(np.std(_as_gray(img)))


def spatial_frequency(img) -> float:
    """RMS of row and column first differences, combined in quadrature."""
    x = _as_gray(img)
    rf2 = np.mean((x[:, 1:] - x[:, :-1]) ** 2)
    cf2 = np.mean((x[1:, :] - x[:-1, :]) ** 2)
    return float(np.sqrt(rf2 + cf2))


def _hist_index(x: np.ndarray, bins: int) -> np.ndarray:
    return np.minimum((x * bins).astype(np.int64), bins - 1)


def _mi_pair(a: np.ndarray, b: np.ndarray, bins: int) -> float:
    ia = _hist_index(a, bins).ravel()
    ib = _hist_index(b, bins).ravel()
    joint = np.bincount(ia * bins + ib, minlength=bins * bins).reshape(bins, bins)
    p = joint / joint.sum()
    pa = p.sum(axis=1)
    pb = p.sum(axis=0)
    nz = p > 0
    outer = pa[:, None] * pb[None, :]
    return float(np.sum(p[nz] * np.log2(p[nz] / outer[nz])))


def mutual_information(fused, ir, vi, bins: int = 256) -> float:
    """MI(fused, ir) + MI(fused, vi) in bits, from ``bins``-bin histograms."""
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    f = _as_gray(fused)
    a = _as_gray(ir)
    b = _as_gray(vi)
    if f.shape != a.shape or f.shape != b.shape:
        raise ValueError("mutual information inputs must share one shape")
    return _mi_pair(f, a, bins) + _mi_pair(f, b, bins)


def _edge_strength_orientation(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sx, sy = _sobel_pair(x)
    g = np.hypot(sx, sy)
    safe_sx = np.where(sx != 0.0, sx, 1.0)
    alpha = np.where(sx != 0.0, np.arctan(sy / safe_sx), np.pi / 2.0)
    return g, alpha


def _preservation(gs: np.ndarray, als: np.ndarray, gf: np.ndarray, alf: np.ndarray):
    hi = np.maximum(gs, gf)
    lo = np.minimum(gs, gf)
    strength_ratio = np.divide(lo, hi, out=np.zeros_like(hi), where=hi > 0)
    q_g = QABF_SCALE / (
        1.0 + np.exp(QABF_STRENGTH_SLOPE * (strength_ratio - QABF_STRENGTH_OFFSET))
    )
    orient_sim = 1.0 - np.abs(als - alf) / (np.pi / 2.0)
    q_a = 1.0 / (1.0 + np.exp(QABF_ORIENT_SLOPE * (orient_sim - QABF_ORIENT_OFFSET)))
    return q_g * q_a


def qabf(fused, ir, vi) -> float:
    """Gradient-preservation score of the fused image against both sources.

    Per pixel and per source, the ratio of the weaker to the stronger
    Sobel magnitude and the similarity of gradient orientations each pass
    through a sigmoid; their product is averaged over both sources with
    source edge strength as the weight.  Returns a value in ``[0, 1]``;
    images with no edges anywhere score 0.
    """
    f = _as_gray(fused)
    a = _as_gray(ir)
    b = _as_gray(vi)
    if f.shape != a.shape or f.shape != b.shape:
        raise ValueError("qabf inputs must share one shape")
    gf, alf = _edge_strength_orientation(f)
    ga, ala = _edge_strength_orientation(a)
    gb, alb = _edge_strength_orientation(b)
    qaf = _preservation(ga, ala, gf, alf)
    qbf = _preservation(gb, alb, gf, alf)
    denom = np.sum(ga + gb)
    if denom == 0.0:
        return 0.0
    return float(np.sum(qaf * ga + qbf * gb) / denom)


def compute_metrics(fused, ir, vi, bins: int = 256) -> dict[str, float]:
    """All metrics of one fused image against its two sources."""
    return {
        "AG": average_gradient(fused),
        "EI": edge_intensity(fused),
        "SD": std_dev(fused),
        "SF": spatial_frequency(fused),
        "MI": mutual_information(fused, ir, vi, bins=bins),
        "Qabf": qabf(fused, ir, vi),
    }


@dataclass
class MetricReport:
    """Per-image metric rows plus their mean.

    Each row is ``{"name": ..., metric: value, ...}``.  The aggregate is
    the arithmetic mean over rows for every metric.
    """

    rows: list[dict] = field(default_factory=list)

    def add(self, name: str, values: dict[str, float]) -> None:
        missing = [m for m in METRIC_NAMES if m not in values]
        if missing:
            raise ValueError(f"metric values missing {missing}")
        self.rows.append({"name": name, **{m: float(values[m]) for m in METRIC_NAMES}})

    def aggregate(self) -> dict[str, float]:
        if not self.rows:
            raise ValueError("no rows to aggregate")
        return {
            m: float(np.mean([r[m] for r in self.rows])) for m in METRIC_NAMES
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("name",) + METRIC_NAMES)
            for row in self.rows:
                writer.writerow([row["name"]] + [f"{row[m]:.6f}" for m in METRIC_NAMES])
            agg = self.aggregate()
            writer.writerow(["mean"] + [f"{agg[m]:.6f}" for m in METRIC_NAMES])

    def write_json(self, path: str | Path) -> None:
        payload = {"images": self.rows, "mean": self.aggregate()}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")
