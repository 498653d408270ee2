"""Concept-aware embedding generator and the per-depth mixing selector.

One learnable anchor per concept queries a token map through single-head
cross-attention; the pooled vector passes through a feed-forward network with
an anchor residual and layer normalization. A linear selector with softmax
mixing weights combines the per-depth concept embeddings into one vector per
concept.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def cross_attend(
    query: torch.Tensor,
    keys: torch.Tensor,
    values: torch.Tensor,
    key_dim: int | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Single-head scaled dot-product attention pooling.

    query: (N, d) or (B, N, d); keys/values: (m, d) or (B, m, d).
    Returns (pooled, attention) where attention rows are probability vectors
    over the m key tokens.
    """
    if keys.shape[-2] == 0:
        raise ValueError("cross_attend needs at least one key token")
    scale = 1.0 / math.sqrt(key_dim if key_dim is not None else keys.shape[-1])
    logits = torch.matmul(query, keys.transpose(-1, -2)) * scale
    attn = torch.softmax(logits, dim=-1)
    return torch.matmul(attn, values), attn


class ConceptEmbeddingGenerator(nn.Module):
    """Anchors + FFN + LayerNorm shared across depths (one instance per model
    unless per-depth generators are explicitly configured)."""

    def __init__(self, n_concepts: int, dim: int, ffn_mult: int = 4, key_dim: int | None = None):
        super().__init__()
        # Unit-scale rows: entries ~ N(0, 1/dim) so each anchor has expected norm 1.
        self.anchors = nn.Parameter(torch.randn(n_concepts, dim) / math.sqrt(dim))
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_mult * dim),
            nn.GELU(),
            nn.Linear(ffn_mult * dim, dim),
        )
        self.norm = nn.LayerNorm(dim)
        self.key_dim = key_dim if key_dim is not None else dim

    def forward(self, token_map: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """token_map: (B, m, d) or (m, d) -> (embeddings (B, N, d), attention (B, N, m))."""
        pooled, attn = cross_attend(self.anchors, token_map, token_map, self.key_dim)
        z = self.norm(self.ffn(pooled) + self.anchors)
        return z, attn


class DepthSelector(nn.Module):
    """Learnable softmax mixing over per-depth concept embeddings.

    Holds one logit row per concept (or a single shared row). Depth 0 is the
    post-patch-embedding map; it is excluded from the mix by default and only
    participates when ``include_input_depth`` is set.
    """

    def __init__(
        self,
        n_concepts: int,
        n_depths: int,
        per_concept: bool = True,
        include_input_depth: bool = False,
    ):
        super().__init__()
        rows = n_concepts if per_concept else 1
        self.n_concepts = n_concepts
        self.n_depths = n_depths
        self.include_input_depth = include_input_depth
        self.logits = nn.Parameter(torch.zeros(rows, n_depths))

    def mixing_weights(self) -> torch.Tensor:
        """(N, n_depths) probability rows; masked depths contribute exactly 0."""
        logits = self.logits
        if not self.include_input_depth:
            mask = torch.zeros_like(logits)
            mask[:, 0] = float("-inf")
            logits = logits + mask
        weights = torch.softmax(logits, dim=-1)
        if weights.shape[0] == 1 and self.n_concepts > 1:
            weights = weights.expand(self.n_concepts, -1)
        return weights

    def forward(self, embeddings_by_depth: torch.Tensor) -> torch.Tensor:
        """(B, n_depths, N, d) -> (B, N, d) softmax-weighted sum over depths."""
        if embeddings_by_depth.shape[1] != self.n_depths:
            raise ValueError(
                f"expected {self.n_depths} depth entries, got {embeddings_by_depth.shape[1]}"
            )
        weights = self.mixing_weights()  # (N, n_depths)
        return torch.einsum("nl,blnd->bnd", weights, embeddings_by_depth)


def aggregate_layers(
    embeddings_by_depth: torch.Tensor, selector: DepthSelector
) -> torch.Tensor:
    """Combine per-depth concept embeddings with the selector's mixing weights."""
    return selector(embeddings_by_depth)
