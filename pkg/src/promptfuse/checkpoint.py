"""Single-file checkpoint format.

Layout (all text is UTF-8, ``\\n``-terminated):

* magic line
* ``meta <count>`` followed by that many ``key = value`` lines, sorted by key
* ``arrays <count>``; for each array, a header line ``<name> <d0> <d1> ...``
  followed immediately by the raw array bytes as little-endian float32 in C
  order

Keys and array names are written in sorted order, so saving the same state
twice yields byte-identical files.  Loading is strict: bad magic, truncated
data, or trailing bytes raise :class:`CheckpointError`.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .core import NetworkConfig
from .network import FusionNet, VARIANTS

MAGIC = b"promptfuse-checkpoint-v1\n"


class CheckpointError(ValueError):
    """Raised on malformed checkpoint files or plan mismatches."""


def write_checkpoint(
    path: str | Path, meta: dict[str, str], arrays: dict[str, np.ndarray]
) -> None:
    """Write ``meta`` and float32 ``arrays`` to ``path`` atomically."""
    path = Path(path)
    for key, value in meta.items():
        text = f"{key} = {value}"
        if "\n" in text:
            raise CheckpointError(f"meta entry {key!r} contains a newline")
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(f"meta {len(meta)}\n".encode())
            for key in sorted(meta):
                fh.write(f"{key} = {meta[key]}\n".encode())
            fh.write(f"arrays {len(arrays)}\n".encode())
            for name in sorted(arrays):
                src = np.asarray(arrays[name], dtype="<f4")
                # ascontiguousarray has ndim >= 1; restore 0-d shapes after
                arr = np.ascontiguousarray(src).reshape(src.shape)
                dims = " ".join(str(d) for d in arr.shape)
                fh.write(f"{name} {dims}\n".encode() if dims else f"{name}\n".encode())
                fh.write(arr.tobytes())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _read_line(fh, what: str) -> str:
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return line[:-1].decode("utf-8")


def read_checkpoint(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Read a checkpoint; returns ``(meta, arrays)`` with float32 arrays."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a promptfuse checkpoint")
        head = _read_line(fh, "meta header").split()
        if len(head) != 2 or head[0] != "meta":
            raise CheckpointError(f"{path}: bad meta header {head!r}")
        meta: dict[str, str] = {}
        for _ in range(int(head[1])):
            line = _read_line(fh, "meta entry")
            key, sep, value = line.partition(" = ")
            if not sep:
                raise CheckpointError(f"{path}: bad meta line {line!r}")
            meta[key] = value
        head = _read_line(fh, "array header").split()
        if len(head) != 2 or head[0] != "arrays":
            raise CheckpointError(f"{path}: bad arrays header {head!r}")
        arrays: dict[str, np.ndarray] = {}
        for _ in range(int(head[1])):
            fields = _read_line(fh, "array descriptor").split()
            name, dims = fields[0], tuple(int(d) for d in fields[1:])
            count = int(np.prod(dims, dtype=np.int64)) if dims else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last array")
    return meta, arrays


# ---------------------------------------------------------------------------
# model-level helpers


def model_meta(net: FusionNet) -> dict[str, str]:
    meta: dict[str, str] = {}
    for line in net.cfg.to_text().splitlines():
        key, _, value = line.partition(" = ")
        meta[f"net.{key}"] = value
    meta["net.variant"] = net.variant
    return meta


def model_arrays(net: FusionNet) -> dict[str, np.ndarray]:
    return {
        f"param/{name}": p.detach().cpu().numpy().astype("<f4")
        for name, p in net.state_dict().items()
    }


def save_model(
    net: FusionNet,
    path: str | Path,
    extra_meta: dict[str, str] | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> None:
    """Save a network (plus optional trainer state) to ``path``."""
    meta = model_meta(net)
    if extra_meta:
        overlap = set(meta) & set(extra_meta)
        if overlap:
            raise CheckpointError(f"extra meta shadows model keys: {sorted(overlap)}")
        meta.update(extra_meta)
    arrays = model_arrays(net)
    if extra_arrays:
        overlap = set(arrays) & set(extra_arrays)
        if overlap:
            raise CheckpointError(f"extra arrays shadow model keys: {sorted(overlap)}")
        arrays.update(extra_arrays)
    write_checkpoint(path, meta, arrays)


def config_from_meta(meta: dict[str, str]) -> tuple[NetworkConfig, str]:
    kv = {k[len("net."):]: v for k, v in meta.items() if k.startswith("net.")}
    variant = kv.pop("variant", None)
    if variant is None:
        raise CheckpointError("checkpoint meta lacks net.variant")
    if variant not in VARIANTS:
        raise CheckpointError(f"unknown variant {variant!r} in checkpoint")
    try:
        cfg = NetworkConfig.from_kv(kv)
    except ValueError as exc:
        raise CheckpointError(f"bad network config in checkpoint: {exc}") from exc
    return cfg, variant


def load_model(
    path: str | Path, dtype: torch.dtype = torch.float32
) -> tuple[FusionNet, dict[str, str], dict[str, np.ndarray]]:
    """Rebuild the network a checkpoint describes and load its weights.

    Every parameter in the config-derived plan must be present with the
    exact shape; extra or missing ``param/`` arrays are errors.  Returns
    the network plus the checkpoint meta and non-parameter arrays.
    """
    meta, arrays = read_checkpoint(path)
    cfg, variant = config_from_meta(meta)
    net = FusionNet(cfg, variant=variant, dtype=dtype)
    state = net.state_dict()
    param_arrays = {k: v for k, v in arrays.items() if k.startswith("param/")}
    expected = {f"param/{name}" for name in state}
    missing = expected - set(param_arrays)
    unexpected = set(param_arrays) - expected
    if missing or unexpected:
        raise CheckpointError(
            f"parameter set mismatch: missing {sorted(missing)[:4]}, "
            f"unexpected {sorted(unexpected)[:4]}"
        )
    with torch.no_grad():
        for name, tensor in state.items():
            arr = param_arrays[f"param/{name}"]
            if tuple(arr.shape) != tuple(tensor.shape):
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {arr.shape}, "
                    f"plan {tuple(tensor.shape)}"
                )
            tensor.copy_(torch.from_numpy(arr).to(tensor.dtype))
    rest = {k: v for k, v in arrays.items() if not k.startswith("param/")}
    return net, meta, rest
