"""Concept-to-text alignment: candidate embeddings, temperature-scaled cosine
scores, the contrastive concept loss, candidate fusion, and concept prediction."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .schema import ConceptSchema
from .text_encoder import TextEncoder

_EPS = 1e-12


def build_candidate_embeddings(schema: ConceptSchema, encoder: TextEncoder) -> list[torch.Tensor]:
    """Encode every rendered candidate prompt; one (k_i, d) matrix per concept.

    The encoder must be frozen; the result is cached by the model as buffers.
    """
    if not getattr(encoder, "frozen", False):
        raise ValueError("candidate embeddings require a frozen text encoder")
    out = []
    for i, concept in enumerate(schema.concepts):
        rows = [encoder.encode(schema.render_prompt(i, j)) for j in range(len(concept.candidates))]
        out.append(torch.stack(rows))
    return out


def cosine_scores(
    concept_embedding: torch.Tensor, candidates: torch.Tensor, tau: torch.Tensor | float
) -> torch.Tensor:
    """Temperature-scaled cosine similarity logits.

    concept_embedding: (B, d) or (d,); candidates: (k, d). Returns (B, k).
    Raises on zero-norm inputs (cosine undefined).
    """
    if concept_embedding.ndim == 1:
        concept_embedding = concept_embedding.unsqueeze(0)
    norms = concept_embedding.norm(dim=-1)
    if bool((norms < _EPS).any()):
        raise ValueError("cosine similarity undefined for zero-vector concept embedding")
    z = concept_embedding / norms.unsqueeze(-1)
    t = candidates / candidates.norm(dim=-1, keepdim=True).clamp_min(_EPS)
    return (z @ t.transpose(0, 1)) / tau


def score(
    concept_embedding: torch.Tensor, candidates: torch.Tensor, tau: torch.Tensor | float
) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (logits, probabilities) for one concept's candidate set."""
    logits = cosine_scores(concept_embedding, candidates, tau)
    return logits, torch.softmax(logits, dim=-1)


def contrastive_loss(logits: list[torch.Tensor], targets: torch.Tensor) -> torch.Tensor:
    """Mean over concepts and batch of -log softmax probability of the true candidate.

    logits: per concept, (B, k_i); targets: (B, N) candidate indices.
    """
    n_concepts = len(logits)
    if targets.ndim == 1:
        targets = targets.unsqueeze(0)
    if targets.shape[1] != n_concepts:
        raise ValueError(f"targets have {targets.shape[1]} concepts, expected {n_concepts}")
    per_concept = []
    for i, logit in enumerate(logits):
        t = targets[:, i]
        if bool((t < 0).any()) or bool((t >= logit.shape[-1]).any()):
            raise IndexError(f"ground-truth candidate index out of range for concept {i}")
        per_concept.append(F.cross_entropy(logit, t))
    return torch.stack(per_concept).mean()


def fuse_candidates(probs: torch.Tensor, candidates: torch.Tensor) -> torch.Tensor:
    """Probability-weighted mixture of candidate embeddings: (B, k) x (k, d) -> (B, d)."""
    return probs @ candidates


def predict_concepts(probs: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Argmax candidate per concept with its probability.

    Ties break toward the lowest candidate index. Returns (indices (B, N),
    confidence (B, N)).
    """
    indices = []
    confidences = []
    for p in probs:
        idx = p.argmax(dim=-1)  # torch.argmax returns the first maximal index
        indices.append(idx)
        confidences.append(p.gather(-1, idx.unsqueeze(-1)).squeeze(-1))
    return torch.stack(indices, dim=-1), torch.stack(confidences, dim=-1)
