"""Classification metrics: rank-based AUC, accuracy, macro F1, report assembly.

AUC uses the rank statistic with average ranks for ties, which agrees exactly
with brute-force pairwise comparison. Degenerate cases (a class without both
positives and negatives) yield ``None`` rather than a number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties receiving the average rank of their block."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Probability that a positive outranks a negative (ties count half).

    Returns None when either class is empty.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def one_vs_rest_auc(probs: np.ndarray, labels: np.ndarray) -> float | None:
    """Macro one-vs-rest AUC over the columns of ``probs``.

    Classes absent from the labels (or covering all of them) are skipped; if
    nothing remains the AUC is undefined and None is returned.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    values = []
    for c in range(probs.shape[1]):
        auc = binary_auc(probs[:, c], (labels == c).astype(np.int64))
        if auc is not None:
            values.append(auc)
    if not values:
        return None
    return float(np.mean(values))


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy undefined on an empty split")
    return float((predictions == labels).mean())


def macro_f1(predictions: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    """Macro-averaged F1 over all ``n_classes`` classes (absent classes score 0)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    scores = []
    for c in range(n_classes):
        tp = int(((predictions == c) & (labels == c)).sum())
        fp = int(((predictions == c) & (labels != c)).sum())
        fn = int(((predictions != c) & (labels == c)).sum())
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclass
class MetricsReport:
    disease: dict = field(default_factory=dict)  # {auc, acc, f1}
    concept: dict = field(default_factory=dict)  # {auc, acc, f1, acc_macro}
    per_concept: dict = field(default_factory=dict)  # title -> {auc, acc, f1}

    def to_dict(self) -> dict:
        return {
            "disease": dict(self.disease),
            "concept": dict(self.concept),
            "per_concept": {k: dict(v) for k, v in self.per_concept.items()},
        }


def _fmt(value: float | None) -> str:
    return "absent" if value is None else f"{value:.3f}"


def format_report(report: MetricsReport) -> str:
    lines = [
        "disease:  AUC={auc}  ACC={acc}  F1={f1}".format(
            auc=_fmt(report.disease.get("auc")),
            acc=_fmt(report.disease.get("acc")),
            f1=_fmt(report.disease.get("f1")),
        ),
        "concept:  AUC={auc}  ACC={acc}  F1={f1}  (per-concept mean ACC={m})".format(
            auc=_fmt(report.concept.get("auc")),
            acc=_fmt(report.concept.get("acc")),
            f1=_fmt(report.concept.get("f1")),
            m=_fmt(report.concept.get("acc_macro")),
        ),
    ]
    for title, vals in report.per_concept.items():
        lines.append(
            f"  {title}:  AUC={_fmt(vals.get('auc'))}  ACC={_fmt(vals.get('acc'))}  "
            f"F1={_fmt(vals.get('f1'))}"
        )
    return "\n".join(lines)


def evaluate_predictions(
    disease_probs: np.ndarray,
    disease_labels: np.ndarray,
    concept_probs: list[np.ndarray],
    concept_labels: np.ndarray,
    concept_titles: list[str] | None = None,
) -> MetricsReport:
    """Assemble the full report from raw probabilities.

    Disease AUC/F1 are macro one-vs-rest; concept ACC is micro-averaged over
    (sample, concept) pairs, while concept AUC/F1 average the per-concept
    values. The per-concept mean accuracy is reported alongside the micro one.
    """
    disease_pred = disease_probs.argmax(axis=1)
    report = MetricsReport()
    report.disease = {
        "auc": one_vs_rest_auc(disease_probs, disease_labels),
        "acc": accuracy(disease_pred, disease_labels),
        "f1": macro_f1(disease_pred, disease_labels, disease_probs.shape[1]),
    }

    titles = concept_titles or [f"concept_{i}" for i in range(len(concept_probs))]
    micro_correct = 0
    micro_total = 0
    aucs: list[float] = []
    f1s: list[float] = []
    accs: list[float] = []
    for i, probs in enumerate(concept_probs):
        labels = concept_labels[:, i]
        pred = probs.argmax(axis=1)
        auc = one_vs_rest_auc(probs, labels)
        acc = accuracy(pred, labels)
        f1 = macro_f1(pred, labels, probs.shape[1])
        report.per_concept[titles[i]] = {"auc": auc, "acc": acc, "f1": f1}
        micro_correct += int((pred == labels).sum())
        micro_total += len(labels)
        if auc is not None:
            aucs.append(auc)
        f1s.append(f1)
        accs.append(acc)

    report.concept = {
        "auc": float(np.mean(aucs)) if aucs else None,
        "acc": micro_correct / micro_total if micro_total else 0.0,
        "f1": float(np.mean(f1s)) if f1s else 0.0,
        "acc_macro": float(np.mean(accs)) if accs else 0.0,
    }
    return report
