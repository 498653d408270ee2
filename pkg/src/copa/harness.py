"""Training loop, evaluation, and the component ablation grid.

Training is fully seed-deterministic on a single device: the seed fixes model
initialization, batch order, and therefore the final parameters bitwise.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .alignment import contrastive_loss
from .data import Dataset
from .diagnosis import total_loss
from .errors import TrainingDiverged
from .metrics import MetricsReport, evaluate_predictions
from .model import ConceptBottleneckModel, ModelConfig
from .schema import ConceptSchema


@dataclass(frozen=True)
class TrainConfig:
    # 1e-3 suits the randomly initialized desk-scale backbone; with pretrained
    # weights loaded through the checkpoint seam the documented default is 1e-5.
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    concept_loss_weight: float = 0.5
    seed: int = 0
    split_seed: int = 0
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self):
        if not 0.0 <= self.concept_loss_weight <= 1.0:
            raise ValueError("concept_loss_weight must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "concept_loss_weight": self.concept_loss_weight,
            "seed": self.seed,
            "split_seed": self.split_seed,
            "split_ratios": list(self.split_ratios),
        }


@dataclass
class TrainResult:
    model: ConceptBottleneckModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = 0.0


def _tensors(ds: Dataset) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    return (
        torch.from_numpy(ds.images),
        torch.from_numpy(ds.concept_labels),
        torch.from_numpy(ds.disease_labels),
    )


def build_model(schema: ConceptSchema, config: ModelConfig, seed: int) -> ConceptBottleneckModel:
    """Construct a model with seeded initialization."""
    torch.manual_seed(seed)
    return ConceptBottleneckModel(config, schema)


def train(
    model: ConceptBottleneckModel,
    config: TrainConfig,
    train_ds: Dataset,
    val_ds: Dataset,
) -> TrainResult:
    """Minimize the composite loss; keep the checkpoint with the best
    validation disease accuracy (ties resolve to the earlier epoch)."""
    images, concept_gt, disease_gt = _tensors(train_ds)
    opt = torch.optim.Adam(model.trainable_parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(config.seed)

    result = TrainResult(model=model)
    best_state: dict | None = None
    n = len(train_ds)
    for epoch in range(config.epochs):
        model.train()
        perm = torch.randperm(n, generator=gen)
        epoch_loss = 0.0
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            out = model(images[idx])
            concept_term = contrastive_loss(out.concept_logits, concept_gt[idx])
            loss = total_loss(
                concept_term, out.disease_logits, disease_gt[idx], config.concept_loss_weight
            )
            if not math.isfinite(float(loss)):
                raise TrainingDiverged(epoch=epoch, step=step, loss=float(loss))
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss) * len(idx)

        val_report = evaluate(model, val_ds, batch_size=config.batch_size)
        val_acc = val_report.disease["acc"]
        result.history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / n,
                "val_disease_acc": val_acc,
                "val_concept_acc": val_report.concept["acc"],
            }
        )
        if best_state is None or val_acc > result.best_val_acc:
            result.best_val_acc = val_acc
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result


@torch.no_grad()
def predict_split(
    model: ConceptBottleneckModel, ds: Dataset, batch_size: int = 128
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Disease probabilities and per-concept probabilities over a split."""
    images = torch.from_numpy(ds.images)
    disease: list[np.ndarray] = []
    concepts: list[list[np.ndarray]] = [[] for _ in model.schema.concepts]
    model.eval()
    for start in range(0, len(ds), batch_size):
        out = model(images[start : start + batch_size])
        disease.append(out.disease_probs.numpy())
        for i, p in enumerate(out.concept_probs):
            concepts[i].append(p.numpy())
    return np.concatenate(disease), [np.concatenate(c) for c in concepts]


def evaluate(
    model: ConceptBottleneckModel, ds: Dataset, batch_size: int = 128
) -> MetricsReport:
    if len(ds) == 0:
        raise ValueError("cannot evaluate an empty split")
    disease_probs, concept_probs = predict_split(model, ds, batch_size)
    return evaluate_predictions(
        disease_probs,
        ds.disease_labels,
        concept_probs,
        ds.concept_labels,
        concept_titles=[c.title for c in model.schema.concepts],
    )


# Rows of the component ablation grid: (aggregation, prompts, frozen backbone).
ABLATION_ROWS = [
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, True, True),
    (True, True, False),
    (True, True, True),
]


def ablate(
    schema: ConceptSchema,
    base_model_config: ModelConfig,
    train_config: TrainConfig,
    train_ds: Dataset,
    val_ds: Dataset,
    test_ds: Dataset,
) -> list[dict]:
    """Train every flag combination of the ablation grid on identical splits."""
    rows = []
    for mla, cpt, fvb in ABLATION_ROWS:
        cfg = ModelConfig(
            backbone=base_model_config.backbone,
            multilayer_aggregation=mla,
            concept_prompts=cpt,
            freeze_backbone=fvb,
            ceg_ffn_mult=base_model_config.ceg_ffn_mult,
            per_concept_selector=base_model_config.per_concept_selector,
            aggregate_input_depth=base_model_config.aggregate_input_depth,
            per_depth_generators=base_model_config.per_depth_generators,
            text_seed=base_model_config.text_seed,
            init_inv_temperature=base_model_config.init_inv_temperature,
        )
        model = build_model(schema, cfg, seed=train_config.seed)
        train(model, train_config, train_ds, val_ds)
        report = evaluate(model, test_ds)
        rows.append(
            {
                "multilayer_aggregation": mla,
                "concept_prompts": cpt,
                "freeze_backbone": fvb,
                "label_acc": report.disease["acc"],
                "label_f1": report.disease["f1"],
                "concept_acc": report.concept["acc"],
                "concept_f1": report.concept["f1"],
            }
        )
    return rows
