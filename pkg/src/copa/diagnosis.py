"""Gated pooling of fused concept representations and the composite loss."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class DiagnosisHead(nn.Module):
    """Softmax-gated convex combination of per-concept vectors followed by a
    single affine classifier. Gating weights are shared across samples and
    read directly as a distribution over concepts."""

    def __init__(self, n_concepts: int, dim: int, n_classes: int):
        super().__init__()
        self.gate_logits = nn.Parameter(torch.zeros(n_concepts))
        self.classifier = nn.Linear(dim, n_classes)

    def gating_weights(self) -> torch.Tensor:
        return torch.softmax(self.gate_logits, dim=0)

    def forward(self, fused: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """fused: (B, N, d) -> (pooled (B, d), class logits (B, C))."""
        alpha = self.gating_weights().to(fused.dtype)
        pooled = torch.einsum("n,bnd->bd", alpha, fused)
        return pooled, self.classifier(pooled)


def gated_aggregate(fused: torch.Tensor, head: DiagnosisHead) -> tuple[torch.Tensor, torch.Tensor]:
    """Functional alias for the head's forward pass."""
    return head(fused)


def total_loss(
    concept_loss: torch.Tensor,
    disease_logits: torch.Tensor,
    disease_targets: torch.Tensor,
    concept_weight: float,
) -> torch.Tensor:
    """concept_weight * concept_loss + (1 - concept_weight) * cross-entropy."""
    if not 0.0 <= concept_weight <= 1.0:
        raise ValueError(f"concept_weight must lie in [0, 1], got {concept_weight}")
    ce = F.cross_entropy(disease_logits, disease_targets)
    return concept_weight * concept_loss + (1.0 - concept_weight) * ce
