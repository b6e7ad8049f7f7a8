"""Degradation prompts and their embeddings.

A prompt is a short English sentence naming the degradation affecting each
modality.  The network never parses the text itself; it only sees a fixed
length embedding vector.  The default encoder is a deterministic hashing
embedder: each lowercase word token maps to a pseudorandom unit-scale
vector seeded from the token string, and a prompt embeds as the normalized
sum of its token vectors.  Prompts that differ in any token therefore get
distinct, reproducible embeddings without any external model download.

A real language model can be dropped in through :class:`TableEncoder`,
which reads a precomputed ``text -> vector`` table from an ``.npz`` file,
or any object satisfying the small :class:`TextEncoder` protocol.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import torch

from .core import PromptEmbedding, derive_seed

IR_MODES = ("none", "low_contrast", "noise")
VI_MODES = ("none", "low_light", "overexposure")

_PHRASES = {
    "none": "no degradation",
    "low_contrast": "low contrast",
    "noise": "noise",
    "low_light": "low light",
    "overexposure": "overexposure",
}

TEMPLATE = (
    "IVIF. The infrared image suffers from {ir}. "
    "The visible image suffers from {vi}."
)


@dataclass(frozen=True)
class PromptTemplate:
    """Degradation selectors for the two modalities."""

    ir_mode: str = "none"
    vi_mode: str = "none"

    def __post_init__(self) -> None:
        if self.ir_mode not in IR_MODES:
            raise ValueError(
                f"unknown infrared degradation {self.ir_mode!r}; "
                f"expected one of {IR_MODES}"
            )
        if self.vi_mode not in VI_MODES:
            raise ValueError(
                f"unknown visible degradation {self.vi_mode!r}; "
                f"expected one of {VI_MODES}"
            )


def render_prompt(template: PromptTemplate) -> str:
    """Render the canonical prompt sentence for a degradation pair."""
    return TEMPLATE.format(
        ir=_PHRASES[template.ir_mode], vi=_PHRASES[template.vi_mode]
    )


@runtime_checkable
class TextEncoder(Protocol):
    """Anything that maps prompt text to a fixed-length embedding."""

    dim: int

    def encode(self, text: str) -> PromptEmbedding: ...


_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashEmbeddingEncoder:
    """Deterministic stand-in for a text encoder.

    Token vectors are drawn from a generator seeded by the token string
    (plus the encoder seed), so the same text always embeds to the same
    vector, in-process and across processes.  Output is L2-normalized
    float64.  No gradients flow through it.
    """

    def __init__(self, dim: int = 512, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            rng = np.random.default_rng(derive_seed("prompt-token", self.seed, token))
            vec = rng.standard_normal(self.dim)
            self._token_cache[token] = vec
        return vec

    def encode(self, text: str) -> PromptEmbedding:
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise ValueError(f"prompt has no encodable tokens: {text!r}")
        total = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            total += self._token_vector(tok)
        norm = float(np.linalg.norm(total))
        if norm < 1e-12:
            raise ValueError(f"degenerate prompt embedding for {text!r}")
        vector = torch.from_numpy(total / norm)
        return PromptEmbedding(vector=vector, text=text)


class TableEncoder:
    """Text encoder backed by a precomputed embedding table.

    The ``.npz`` file must hold a ``texts`` string array and a matching
    ``vectors`` float array of shape ``(len(texts), dim)``.  Lookup is by
    exact string match; unknown prompts raise ``KeyError``.  This is the
    integration point for embeddings produced by an actual language model.
    """

    def __init__(self, path: str | Path):
        data = np.load(Path(path), allow_pickle=False)
        if "texts" not in data or "vectors" not in data:
            raise ValueError(f"{path}: expected 'texts' and 'vectors' arrays")
        texts = [str(t) for t in data["texts"]]
        vectors = np.asarray(data["vectors"], dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(texts):
            raise ValueError(f"{path}: vectors must be (len(texts), dim)")
        self.dim = vectors.shape[1]
        self._table = {t: vectors[i] for i, t in enumerate(texts)}

    def encode(self, text: str) -> PromptEmbedding:
        try:
            vec = self._table[text]
        except KeyError:
            raise KeyError(f"no embedding stored for prompt {text!r}") from None
        return PromptEmbedding(vector=torch.from_numpy(vec.copy()), text=text)


def get_encoder(
    dim: int, table_path: str | Path | None = None, seed: int = 0
) -> TextEncoder:
    """Build the default encoder, or a table-backed one when a path is given."""
    if table_path is not None:
        enc = TableEncoder(table_path)
        if enc.dim != dim:
            raise ValueError(
                f"embedding table dim {enc.dim} != configured prompt_dim {dim}"
            )
        return enc
    return HashEmbeddingEncoder(dim=dim, seed=seed)
