"""Explanation artifacts: attention heatmaps, JSON payloads, static plots."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch
import torch.nn.functional as F

from .alignment import predict_concepts
from .model import ConceptBottleneckModel, ModelOutput, selector_weight_matrix
from .schema import ConceptSchema

HEATMAP_CMAP = "viridis"
OVERLAY_ALPHA = 0.45


def concept_heatmaps(model: ConceptBottleneckModel, output: ModelOutput) -> torch.Tensor:
    """Selector-weighted attention over patch tokens, as a patch grid.

    Combines the recorded per-depth attention rows (class-token column
    dropped) with the depth attribution actually used by the forward pass.
    Returns (B, N, g, g).
    """
    g = model.config.backbone.grid_size
    patch_attn = output.ceg_attention[..., 1:]  # (B, L+1, N, n_patches)
    weights = selector_weight_matrix(model).to(patch_attn.dtype)  # (N, L+1)
    combined = torch.einsum("nl,blnp->bnp", weights, patch_attn)
    b, n, _ = combined.shape
    return combined.reshape(b, n, g, g)


def upsample_bilinear(grid: torch.Tensor, size: int) -> torch.Tensor:
    """(…, g, g) -> (…, size, size) bilinear, align_corners=False."""
    shaped = grid.reshape(-1, 1, *grid.shape[-2:]).to(torch.float32)
    up = F.interpolate(shaped, size=(size, size), mode="bilinear", align_corners=False)
    return up.reshape(*grid.shape[:-2], size, size)


def explanation_payload(
    model: ConceptBottleneckModel,
    schema: ConceptSchema,
    output: ModelOutput,
    index: int = 0,
) -> dict:
    """JSON-able explanation for one sample of a batched prediction."""
    pred_idx, confidence = predict_concepts(output.concept_probs)
    disease_probs = output.disease_probs[index]
    predicted_class = int(output.disease_logits[index].argmax())
    heatmaps = concept_heatmaps(model, output)[index]

    concepts = []
    for i, concept in enumerate(schema.concepts):
        concepts.append(
            {
                "index": i,
                "title": concept.title,
                "candidates": list(concept.candidates),
                "logits": [float(v) for v in output.concept_logits[i][index]],
                "probabilities": [float(v) for v in output.concept_probs[i][index]],
                "predicted": int(pred_idx[index, i]),
                "predicted_phrase": concept.candidates[int(pred_idx[index, i])],
                "confidence": float(confidence[index, i]),
            }
        )

    return {
        "schema_hash": schema.hash(),
        "diagnosis": {
            "classes": list(schema.disease_classes),
            "probabilities": [float(v) for v in disease_probs],
            "predicted": predicted_class,
            "predicted_class": schema.disease_classes[predicted_class],
            "confidence": float(disease_probs[predicted_class]),
        },
        "gating_alpha": [float(v) for v in model.head.gating_weights().detach()],
        "selector_weights": selector_weight_matrix(model).tolist(),
        "concepts": concepts,
        "heatmaps": [
            {"concept": schema.concepts[i].title, "grid": heatmaps[i].tolist()}
            for i in range(schema.n_concepts)
        ],
        "patch_grid": model.config.backbone.grid_size,
        "image_size": model.config.backbone.image_size,
    }


def colormap_lut(name: str = HEATMAP_CMAP, entries: int = 256) -> list[list[float]]:
    """RGB lookup table for a matplotlib colormap; shared with the workbench."""
    cmap = plt.get_cmap(name)
    return [[float(c) for c in cmap(i / (entries - 1))[:3]] for i in range(entries)]


def overlay_image(image: np.ndarray, heat: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Alpha-blend a normalized heatmap onto an RGB image. Both (S, S[, 3])."""
    lo, hi = float(heat.min()), float(heat.max())
    norm = (heat - lo) / (hi - lo) if hi > lo else np.zeros_like(heat)
    cmap = plt.get_cmap(HEATMAP_CMAP)
    colored = cmap(norm)[..., :3]
    return (1 - alpha) * image + alpha * colored


def export_explanation(
    model: ConceptBottleneckModel,
    schema: ConceptSchema,
    image: torch.Tensor,
    out_dir: str | Path,
) -> dict:
    """Write the explanation bundle: one JSON record plus one overlay plot per
    concept. Returns the payload that was written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if image.ndim == 3:
        image = image.unsqueeze(0)
    output = model.predict(image)
    payload = explanation_payload(model, schema, output, index=0)
    (out_dir / "explanation.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")

    size = model.config.backbone.image_size
    pixels = image[0].numpy()
    for entry in payload["heatmaps"]:
        grid = torch.tensor(entry["grid"])
        up = upsample_bilinear(grid, size).numpy()
        blended = overlay_image(pixels, up)
        fig, axes = plt.subplots(1, 2, figsize=(5, 2.6))
        axes[0].imshow(pixels)
        axes[0].set_title("input")
        axes[1].imshow(blended)
        axes[1].set_title(entry["concept"])
        for ax in axes:
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(out_dir / f"heatmap_{entry['concept']}.png", dpi=120)
        plt.close(fig)
    return payload
