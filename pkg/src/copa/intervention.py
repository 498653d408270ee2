"""Test-time concept intervention: confidence edits, re-prediction, sweeps.

Edits touch the cached alignment scores only; model parameters are never
modified. A positive edit forces one candidate's probability to 1; a negative
edit removes one candidate by masking its logit and re-normalizing the rest
through softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .alignment import fuse_candidates, predict_concepts
from .model import ConceptBottleneckModel, ModelOutput

POSITIVE = "positive"
NEGATIVE = "negative"
_SUM_TOL = 1e-6


@dataclass(frozen=True)
class InterventionSpec:
    concept: int
    mode: str  # "positive" | "negative"
    candidate: int  # index of the ground-truth candidate

    def __post_init__(self):
        if self.mode not in (POSITIVE, NEGATIVE):
            raise ValueError(f"mode must be 'positive' or 'negative', got {self.mode!r}")


@dataclass
class DiagnosisSnapshot:
    probs: torch.Tensor  # (B, C)
    predicted: torch.Tensor  # (B,)


@dataclass
class InterventionResult:
    pre_probs: dict[int, torch.Tensor]  # touched concept -> (B, k_i)
    post_probs: dict[int, torch.Tensor]
    pre: DiagnosisSnapshot
    post: DiagnosisSnapshot
    changed: bool


def apply_positive(probs: torch.Tensor, candidate: int) -> torch.Tensor:
    """One-hot probabilities at the given candidate. probs: (..., k)."""
    k = probs.shape[-1]
    if not 0 <= candidate < k:
        raise IndexError(f"candidate {candidate} out of range [0, {k})")
    out = torch.zeros_like(probs)
    out[..., candidate] = 1.0
    return out


def apply_negative(logits: torch.Tensor, candidate: int) -> torch.Tensor:
    """Mask the candidate's logit and re-softmax the survivors.

    The masked probability is exactly 0 and the survivors sum to 1.
    Requires at least 2 candidates.
    """
    k = logits.shape[-1]
    if k < 2:
        raise ValueError("negative intervention needs at least 2 candidates")
    if not 0 <= candidate < k:
        raise IndexError(f"candidate {candidate} out of range [0, {k})")
    masked = logits.clone()
    masked[..., candidate] = float("-inf")
    return torch.softmax(masked, dim=-1)


def edited_probabilities(
    spec: InterventionSpec, logits: torch.Tensor, probs: torch.Tensor
) -> torch.Tensor:
    if spec.mode == POSITIVE:
        return apply_positive(probs, spec.candidate)
    return apply_negative(logits, spec.candidate)


def _validate_contract(probs: torch.Tensor, spec: InterventionSpec) -> None:
    if bool((probs < 0).any()):
        raise AssertionError("intervened probabilities must be non-negative")
    sums = probs.sum(dim=-1)
    if bool((sums - 1.0).abs().max() > _SUM_TOL):
        raise AssertionError("intervened probabilities must sum to 1")
    target = probs[..., spec.candidate]
    expected = 1.0 if spec.mode == POSITIVE else 0.0
    if bool((target - expected).abs().max() > 0):
        raise AssertionError(f"{spec.mode} intervention must pin p[candidate] to {expected}")


def rescore(
    model: ConceptBottleneckModel,
    concept_probs: list[torch.Tensor],
    base: ModelOutput,
    touched: set[int],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Recompute fusion and diagnosis from (partially edited) concept probabilities.

    Untouched concepts reuse the already-fused vectors so their path is
    bitwise identical to the base prediction.
    """
    cols = []
    for i, cand in enumerate(model.candidate_embeddings()):
        if i in touched:
            cols.append(fuse_candidates(concept_probs[i], cand))
        else:
            cols.append(base.fused[:, i])
    fused = torch.stack(cols, dim=1)
    pooled, logits = model.head(fused)
    return pooled, logits


def intervene_on_output(
    model: ConceptBottleneckModel, base: ModelOutput, specs: list[InterventionSpec]
) -> InterventionResult:
    """Apply edits to a cached prediction and re-run the diagnosis stage."""
    seen = [s.concept for s in specs]
    if len(set(seen)) != len(seen):
        raise ValueError("intervention specs must touch distinct concepts")
    n = len(base.concept_probs)
    for s in specs:
        if not 0 <= s.concept < n:
            raise IndexError(f"concept index {s.concept} out of range [0, {n})")

    probs = list(base.concept_probs)
    pre_probs: dict[int, torch.Tensor] = {}
    post_probs: dict[int, torch.Tensor] = {}
    for s in specs:
        edited = edited_probabilities(s, base.concept_logits[s.concept], probs[s.concept])
        _validate_contract(edited, s)
        pre_probs[s.concept] = probs[s.concept]
        post_probs[s.concept] = edited
        probs[s.concept] = edited

    touched = {s.concept for s in specs}
    with torch.no_grad():
        _, post_logits = rescore(model, probs, base, touched)
        post = DiagnosisSnapshot(
            probs=torch.softmax(post_logits, dim=-1), predicted=post_logits.argmax(dim=-1)
        )
    pre = DiagnosisSnapshot(probs=base.disease_probs, predicted=base.disease_logits.argmax(dim=-1))
    return InterventionResult(
        pre_probs=pre_probs,
        post_probs=post_probs,
        pre=pre,
        post=post,
        changed=bool((pre.predicted != post.predicted).any()),
    )


def intervene_and_predict(
    model: ConceptBottleneckModel, images: torch.Tensor, specs: list[InterventionSpec]
) -> InterventionResult:
    base = model.predict(images)
    return intervene_on_output(model, base, specs)


def _select_eligible(
    pred: torch.Tensor, conf: torch.Tensor, gt: torch.Tensor, mode: str, n_edits: int
) -> list[list[int]]:
    """Per-sample concept choice: wrong concepts for positive mode, correct ones
    for negative mode, ordered by descending prediction confidence (ties keep
    the lower concept index), capped at n_edits."""
    chosen: list[list[int]] = []
    for s in range(pred.shape[0]):
        if mode == POSITIVE:
            eligible = [i for i in range(pred.shape[1]) if pred[s, i] != gt[s, i]]
        else:
            eligible = [i for i in range(pred.shape[1]) if pred[s, i] == gt[s, i]]
        eligible.sort(key=lambda i: (-float(conf[s, i]), i))
        chosen.append(eligible[:n_edits])
    return chosen


def intervention_sweep(
    model: ConceptBottleneckModel,
    images: torch.Tensor,
    concept_labels: torch.Tensor,
    disease_labels: torch.Tensor,
    n_edits: int,
    mode: str,
    batch_size: int = 128,
) -> dict:
    """Sweep one edit budget over a split and report the accuracy delta.

    Positive mode corrects up to ``n_edits`` mispredicted concepts per sample;
    negative mode suppresses the true candidate of up to ``n_edits`` correctly
    predicted concepts. Fully deterministic for a fixed model and split.
    """
    if n_edits < 1:
        raise ValueError("n_edits must be >= 1")
    if mode not in (POSITIVE, NEGATIVE):
        raise ValueError(f"mode must be 'positive' or 'negative', got {mode!r}")

    total = images.shape[0]
    base_correct = 0
    post_correct = 0
    edited_samples = 0
    edits_applied = 0

    for start in range(0, total, batch_size):
        stop = min(start + batch_size, total)
        batch = images[start:stop]
        cgt = concept_labels[start:stop]
        dgt = disease_labels[start:stop]
        out = model.predict(batch)
        pred, conf = predict_concepts(out.concept_probs)
        base_pred = out.disease_logits.argmax(dim=-1)
        base_correct += int((base_pred == dgt).sum())

        chosen = _select_eligible(pred, conf, cgt, mode, n_edits)
        probs = [p.clone() for p in out.concept_probs]
        touched: set[int] = set()
        for s, concepts in enumerate(chosen):
            if concepts:
                edited_samples += 1
            for i in concepts:
                spec = InterventionSpec(concept=i, mode=mode, candidate=int(cgt[s, i]))
                edited = edited_probabilities(
                    spec, out.concept_logits[i][s : s + 1], probs[i][s : s + 1]
                )
                _validate_contract(edited, spec)
                probs[i][s : s + 1] = edited
                touched.add(i)
                edits_applied += 1

        with torch.no_grad():
            _, post_logits = rescore(model, probs, out, touched)
        post_correct += int((post_logits.argmax(dim=-1) == dgt).sum())

    base_acc = base_correct / total
    post_acc = post_correct / total
    return {
        "mode": mode,
        "n": n_edits,
        "samples": total,
        "edited_samples": edited_samples,
        "edits_applied": edits_applied,
        "baseline_accuracy": base_acc,
        "intervened_accuracy": post_acc,
        "delta": post_acc - base_acc,
    }
