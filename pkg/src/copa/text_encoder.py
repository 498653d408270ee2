"""Frozen text encoders.

The default encoder is a deterministic stand-in for a pretrained text model:
it hashes the prompt string into a seed and draws a fixed unit-norm Gaussian
vector from it. Any object with an ``encode(text) -> Tensor`` method and a
``frozen`` attribute can be plugged in instead (e.g. an adapter around a real
pretrained encoder); candidate embeddings are cached as model buffers, so the
encoder is only consulted when the schema or seed changes.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, runtime_checkable

import numpy as np
import torch


@runtime_checkable
class TextEncoder(Protocol):
    frozen: bool
    dim: int

    def encode(self, text: str) -> torch.Tensor: ...


class HashedTextEncoder:
    """Deterministic seeded text encoder producing unit-norm vectors.

    Stable across processes and platforms: the per-text RNG stream is keyed by
    sha256 of (seed, text).
    """

    frozen = True

    def __init__(self, dim: int, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed

    def encode(self, text: str) -> torch.Tensor:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.dim)
        vec /= np.linalg.norm(vec)
        return torch.from_numpy(vec).to(torch.float32)

    def encode_batch(self, texts: list[str]) -> torch.Tensor:
        return torch.stack([self.encode(t) for t in texts])
