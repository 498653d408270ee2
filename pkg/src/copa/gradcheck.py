"""Finite-difference verification of the composite loss gradients.

Runs a tiny float64 model end to end and compares autograd gradients against
central differences for every trainable parameter group. The error measure is
per group: max absolute deviation over max absolute gradient magnitude.
"""

from __future__ import annotations

import torch

from .alignment import contrastive_loss
from .data import Dataset
from .diagnosis import total_loss
from .encoder import BackboneConfig
from .harness import build_model
from .model import ConceptBottleneckModel, ModelConfig
from .schema import ConceptSchema, schema_from_dict


def tiny_schema() -> ConceptSchema:
    return schema_from_dict(
        {
            "modality_preamble": "This is a synthetic image",
            "template": "the {title} of the lesion is {candidate}",
            "disease_classes": ["benign", "malignant"],
            "concepts": [
                {"title": "hue", "candidates": ["warm", "cool"]},
                {"title": "edge", "candidates": ["smooth", "jagged"]},
            ],
        }
    )


def build_tiny_setup(
    freeze_backbone: bool = True, seed: int = 0, batch: int = 2
) -> tuple[ConceptBottleneckModel, torch.Tensor, torch.Tensor, torch.Tensor]:
    """A 2-concept, 2-layer, width-8 model on 8x8 images, in float64."""
    schema = tiny_schema()
    config = ModelConfig(
        backbone=BackboneConfig(
            layers=2, dim=8, heads=2, image_size=8, patch_size=4, num_classes=2
        ),
        freeze_backbone=freeze_backbone,
    )
    model = build_model(schema, config, seed=seed).double()
    gen = torch.Generator().manual_seed(seed + 1)
    images = torch.rand(batch, 8, 8, 3, generator=gen, dtype=torch.float64)
    concept_gt = torch.randint(0, 2, (batch, 2), generator=gen)
    disease_gt = torch.randint(0, 2, (batch,), generator=gen)
    return model, images, concept_gt, disease_gt


def _loss(
    model: ConceptBottleneckModel,
    images: torch.Tensor,
    concept_gt: torch.Tensor,
    disease_gt: torch.Tensor,
    concept_weight: float,
) -> torch.Tensor:
    out = model(images)
    concept_term = contrastive_loss(out.concept_logits, concept_gt)
    return total_loss(concept_term, out.disease_logits, disease_gt, concept_weight)


def gradcheck_model(
    model: ConceptBottleneckModel,
    images: torch.Tensor,
    concept_gt: torch.Tensor,
    disease_gt: torch.Tensor,
    concept_weight: float = 0.5,
    eps: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter-group relative error between autograd and central
    differences. The model must be in float64."""
    if next(model.parameters()).dtype != torch.float64:
        raise ValueError("gradient checking requires a float64 model")
    model.eval()

    loss = _loss(model, images, concept_gt, disease_gt, concept_weight)
    model.zero_grad()
    loss.backward()
    analytic = {
        name: p.grad.detach().clone()
        for name, p in model.named_parameters()
        if p.requires_grad
    }

    errors: dict[str, float] = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            if not param.requires_grad:
                continue
            numeric = torch.zeros_like(param)
            flat = param.view(-1)
            num_flat = numeric.view(-1)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                hi = float(_loss(model, images, concept_gt, disease_gt, concept_weight))
                flat[idx] = orig - eps
                lo = float(_loss(model, images, concept_gt, disease_gt, concept_weight))
                flat[idx] = orig
                num_flat[idx] = (hi - lo) / (2 * eps)
            diff = (analytic[name] - numeric).abs().max().item()
            scale = max(analytic[name].abs().max().item(), numeric.abs().max().item(), 1e-8)
            errors[name] = diff / scale
    return errors


def run_gradcheck(
    freeze_backbone: bool = True, seed: int = 0, eps: float = 1e-5
) -> tuple[float, dict[str, float]]:
    model, images, concept_gt, disease_gt = build_tiny_setup(freeze_backbone, seed)
    errors = gradcheck_model(model, images, concept_gt, disease_gt, eps=eps)
    return max(errors.values()), errors


def dataset_sample(ds: Dataset, index: int) -> torch.Tensor:
    return torch.from_numpy(ds.images[index]).unsqueeze(0)
