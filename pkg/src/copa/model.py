"""Full concept-bottleneck pipeline: backbone with concept prompts, per-depth
concept extraction, depth aggregation, text alignment, and gated diagnosis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .alignment import build_candidate_embeddings, fuse_candidates, score
from .ceg import ConceptEmbeddingGenerator, DepthSelector
from .diagnosis import DiagnosisHead
from .encoder import BackboneConfig, LayerTrace, ViTBackbone
from .schema import ConceptSchema
from .text_encoder import HashedTextEncoder, TextEncoder


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig
    multilayer_aggregation: bool = True
    concept_prompts: bool = True
    freeze_backbone: bool = True
    ceg_ffn_mult: int = 4
    per_concept_selector: bool = True
    aggregate_input_depth: bool = False
    per_depth_generators: bool = False
    text_seed: int = 0
    init_inv_temperature: float = 14.29

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "backbone"}
        d["backbone"] = self.backbone.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        backbone = BackboneConfig(**d.pop("backbone"))
        return ModelConfig(backbone=backbone, **d)


@dataclass
class ModelOutput:
    """Everything one forward pass produces, kept for loss, explanation and
    intervention. Per-concept tensors are lists because candidate counts vary."""

    trace: LayerTrace
    layer_embeddings: torch.Tensor  # (B, L+1, N, d)
    ceg_attention: torch.Tensor  # (B, L+1, N, m)
    aggregated: torch.Tensor  # (B, N, d)
    concept_logits: list[torch.Tensor] = field(default_factory=list)  # each (B, k_i)
    concept_probs: list[torch.Tensor] = field(default_factory=list)  # each (B, k_i)
    fused: torch.Tensor | None = None  # (B, N, d)
    pooled: torch.Tensor | None = None  # (B, d)
    disease_logits: torch.Tensor | None = None  # (B, C)

    @property
    def disease_probs(self) -> torch.Tensor:
        return torch.softmax(self.disease_logits, dim=-1)


class ConceptBottleneckModel(nn.Module):
    def __init__(
        self,
        config: ModelConfig,
        schema: ConceptSchema,
        text_encoder: TextEncoder | None = None,
    ):
        super().__init__()
        if config.backbone.num_classes != schema.n_classes:
            raise ValueError(
                f"backbone num_classes {config.backbone.num_classes} != "
                f"schema classes {schema.n_classes}"
            )
        self.config = config
        self.schema = schema
        d = config.backbone.dim
        n = schema.n_concepts

        self.backbone = ViTBackbone(config.backbone)
        n_gens = config.backbone.layers + 1 if config.per_depth_generators else 1
        self.generators = nn.ModuleList(
            ConceptEmbeddingGenerator(n, d, ffn_mult=config.ceg_ffn_mult) for _ in range(n_gens)
        )
        self.selector = DepthSelector(
            n,
            config.backbone.layers + 1,
            per_concept=config.per_concept_selector,
            include_input_depth=config.aggregate_input_depth,
        )
        self.head = DiagnosisHead(n, d, schema.n_classes)
        self.log_tau = nn.Parameter(torch.tensor(math.log(1.0 / config.init_inv_temperature)))

        encoder = text_encoder or HashedTextEncoder(d, seed=config.text_seed)
        for i, emb in enumerate(build_candidate_embeddings(schema, encoder)):
            self.register_buffer(f"candidates_{i}", emb)

        self.set_backbone_frozen(config.freeze_backbone)

    # -- parameter bookkeeping -------------------------------------------------

    def set_backbone_frozen(self, frozen: bool) -> None:
        for p in self.backbone.parameters():
            p.requires_grad_(not frozen)

    def parameter_partition(self) -> dict[str, list[str]]:
        """Exact {trainable, frozen} name sets under the current flags."""
        part: dict[str, list[str]] = {"trainable": [], "frozen": []}
        for name, p in self.named_parameters():
            part["trainable" if p.requires_grad else "frozen"].append(name)
        return part

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    # -- components ------------------------------------------------------------

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp()

    def candidate_embeddings(self) -> list[torch.Tensor]:
        return [getattr(self, f"candidates_{i}") for i in range(self.schema.n_concepts)]

    def _generator(self, depth: int) -> ConceptEmbeddingGenerator:
        if self.config.per_depth_generators:
            return self.generators[depth]
        return self.generators[0]

    # -- forward ---------------------------------------------------------------

    def forward(self, images: torch.Tensor) -> ModelOutput:
        if images.ndim == 3:
            images = images.unsqueeze(0)
        embeddings: dict[int, torch.Tensor] = {}
        attentions: dict[int, torch.Tensor] = {}

        def prompt_fn(depth: int, token_map: torch.Tensor) -> torch.Tensor:
            z, attn = self._generator(depth)(token_map)
            embeddings[depth] = z
            attentions[depth] = attn
            return z

        trace = self.backbone.encode(
            images, prompt_fn if self.config.concept_prompts else None
        )
        # The prompt path covers depths 0..L-1; fill whatever is missing so the
        # trace, aggregation and explanation always span depths 0..L.
        for depth, token_map in enumerate(trace.token_maps):
            if depth not in embeddings:
                z, attn = self._generator(depth)(token_map)
                embeddings[depth] = z
                attentions[depth] = attn

        n_depths = len(trace.token_maps)
        layer_embeddings = torch.stack([embeddings[l] for l in range(n_depths)], dim=1)
        ceg_attention = torch.stack([attentions[l] for l in range(n_depths)], dim=1)

        if self.config.multilayer_aggregation:
            aggregated = self.selector(layer_embeddings)
        else:
            aggregated = layer_embeddings[:, -1]

        tau = self.tau
        logits_list: list[torch.Tensor] = []
        probs_list: list[torch.Tensor] = []
        fused_cols: list[torch.Tensor] = []
        for i, cand in enumerate(self.candidate_embeddings()):
            logits, probs = score(aggregated[:, i], cand, tau)
            logits_list.append(logits)
            probs_list.append(probs)
            fused_cols.append(fuse_candidates(probs, cand))
        fused = torch.stack(fused_cols, dim=1)  # (B, N, d)

        pooled, disease_logits = self.head(fused)
        return ModelOutput(
            trace=trace,
            layer_embeddings=layer_embeddings,
            ceg_attention=ceg_attention,
            aggregated=aggregated,
            concept_logits=logits_list,
            concept_probs=probs_list,
            fused=fused,
            pooled=pooled,
            disease_logits=disease_logits,
        )

    @torch.no_grad()
    def predict(self, images: torch.Tensor) -> ModelOutput:
        """Inference forward pass; deterministic given parameters and input."""
        was_training = self.training
        self.eval()
        try:
            return self(images)
        finally:
            self.train(was_training)


def selector_weight_matrix(model: ConceptBottleneckModel) -> torch.Tensor:
    """(N, L+1) per-concept depth attribution actually used by the forward pass.

    With aggregation disabled this is the implied one-hot row on the last depth.
    """
    n = model.schema.n_concepts
    n_depths = model.config.backbone.layers + 1
    if model.config.multilayer_aggregation:
        return model.selector.mixing_weights().detach()
    weights = torch.zeros(n, n_depths)
    weights[:, -1] = 1.0
    return weights
