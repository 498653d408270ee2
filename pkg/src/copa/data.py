"""Datasets: synthetic shape/color/texture generator, manifest loader, splits.

Images are 8-bit RGB on disk and float32 in [0, 1] in memory. The synthetic
generator is the desk-scale stand-in for real dermoscopy data: each sample is
a colored, optionally striped shape on a neutral background, and the disease
label is a fixed boolean rule over the generation parameters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import csv

import numpy as np
from PIL import Image

from .errors import ManifestError
from .schema import ConceptSchema, schema_from_dict

COLOR_NAMES = ("red", "green", "blue")
SHAPE_NAMES = ("circle", "square")
TEXTURE_NAMES = ("striped", "solid")

_COLORS = {
    "red": (0.90, 0.10, 0.12),
    "green": (0.10, 0.80, 0.20),
    "blue": (0.12, 0.20, 0.88),
}


def synthetic_schema() -> ConceptSchema:
    """The built-in 3-concept vocabulary used by the synthetic generator.

    Mirrors configs/synthetic_schema.yaml shipped with the repository.
    """
    return schema_from_dict(
        {
            "modality_preamble": "This is a synthetic image",
            "template": "the {title} of the lesion is {candidate}",
            "disease_classes": ["benign", "malignant"],
            "concepts": [
                {"title": "color", "candidates": list(COLOR_NAMES)},
                {"title": "shape", "candidates": list(SHAPE_NAMES)},
                {"title": "texture", "candidates": list(TEXTURE_NAMES)},
            ],
        }
    )


def default_label_rule(color: int, shape: int, texture: int) -> int:
    """Malignant iff the lesion is red and striped."""
    return int(color == 0 and texture == 0)


@dataclass(frozen=True)
class SyntheticConfig:
    count: int = 2000
    image_size: int = 32
    noise: float = 0.03
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "image_size": self.image_size,
            "noise": self.noise,
            "seed": self.seed,
        }


@dataclass
class Dataset:
    images: np.ndarray  # (n, H, W, 3) float32 in [0, 1]
    concept_labels: np.ndarray  # (n, N) int64
    disease_labels: np.ndarray  # (n,) int64

    def __len__(self) -> int:
        return len(self.images)

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            images=self.images[indices],
            concept_labels=self.concept_labels[indices],
            disease_labels=self.disease_labels[indices],
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.concept_labels).tobytes())
        h.update(np.ascontiguousarray(self.disease_labels).tobytes())
        h.update(np.round(self.images * 255).astype(np.uint8).tobytes())
        return h.hexdigest()


def _render_sample(
    size: int, color: int, shape: int, texture: int, rng: np.random.Generator, noise: float
) -> np.ndarray:
    bg = rng.uniform(0.45, 0.55)
    img = np.full((size, size, 3), bg, dtype=np.float64)

    base = np.array(_COLORS[COLOR_NAMES[color]]) * rng.uniform(0.8, 1.0)
    cy, cx = (size - 1) / 2 + rng.uniform(-2, 2, size=2)
    radius = rng.uniform(0.28, 0.40) * size

    yy, xx = np.mgrid[0:size, 0:size]
    if SHAPE_NAMES[shape] == "circle":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    else:
        mask = (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)

    fill = np.broadcast_to(base, (size, size, 3)).copy()
    if TEXTURE_NAMES[texture] == "striped":
        width = int(rng.integers(2, 4))
        phase = int(rng.integers(0, 2 * width))
        dark = ((yy + phase) // width) % 2 == 1
        fill[dark] = base * 0.25
    img[mask] = fill[mask]

    img += rng.normal(0.0, noise, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    # Quantize to 8-bit so in-memory data matches a save/load round trip.
    return (np.round(img * 255.0) / 255.0).astype(np.float32)


def generate_synthetic(
    config: SyntheticConfig, rule: Callable[[int, int, int], int] | None = None
) -> Dataset:
    """Render ``config.count`` samples; deterministic for a fixed seed.

    Concept labels are the generation parameters themselves, so they are
    perfectly recoverable; the disease label is ``rule`` applied to them.
    """
    rule = rule or default_label_rule
    rng = np.random.default_rng(config.seed)
    colors = rng.integers(0, len(COLOR_NAMES), size=config.count)
    shapes = rng.integers(0, len(SHAPE_NAMES), size=config.count)
    textures = rng.integers(0, len(TEXTURE_NAMES), size=config.count)

    images = np.empty((config.count, config.image_size, config.image_size, 3), dtype=np.float32)
    for i in range(config.count):
        images[i] = _render_sample(
            config.image_size, int(colors[i]), int(shapes[i]), int(textures[i]), rng, config.noise
        )
    concept_labels = np.stack([colors, shapes, textures], axis=1).astype(np.int64)
    disease_labels = np.array(
        [rule(int(c), int(s), int(t)) for c, s, t in concept_labels], dtype=np.int64
    )
    return Dataset(images=images, concept_labels=concept_labels, disease_labels=disease_labels)


def save_dataset(dataset: Dataset, path: str | Path, meta: dict | None = None) -> None:
    np.savez_compressed(
        path,
        images=np.round(dataset.images * 255).astype(np.uint8),
        concept_labels=dataset.concept_labels,
        disease_labels=dataset.disease_labels,
        meta=json.dumps(meta or {}),
    )


def load_dataset(path: str | Path) -> Dataset:
    with np.load(path, allow_pickle=False) as archive:
        return Dataset(
            images=archive["images"].astype(np.float32) / 255.0,
            concept_labels=archive["concept_labels"].astype(np.int64),
            disease_labels=archive["disease_labels"].astype(np.int64),
        )


def split_indices(
    dataset: Dataset, ratios: tuple[float, float, float] = (0.7, 0.15, 0.15), seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint, exhaustive train/val/test indices, stratified by disease label.

    Deterministic in (dataset fingerprint, seed): the shuffle stream is keyed
    by both, so the same data and seed always give the same partition.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    fp = int(dataset.fingerprint()[:16], 16)
    rng = np.random.default_rng([seed, fp])

    buckets: list[list[int]] = [[], [], []]
    for label in np.unique(dataset.disease_labels):
        idx = np.flatnonzero(dataset.disease_labels == label)
        rng.shuffle(idx)
        n = len(idx)
        # Largest-remainder allocation inside each class keeps totals exact.
        exact = [r * n for r in ratios]
        counts = [int(np.floor(e)) for e in exact]
        remainders = sorted(range(3), key=lambda j: exact[j] - counts[j], reverse=True)
        for j in remainders[: n - sum(counts)]:
            counts[j] += 1
        offsets = np.cumsum([0] + counts)
        for j in range(3):
            buckets[j].extend(idx[offsets[j] : offsets[j + 1]].tolist())

    return tuple(np.sort(np.array(b, dtype=np.int64)) for b in buckets)  # type: ignore[return-value]


def split(
    dataset: Dataset, ratios: tuple[float, float, float] = (0.7, 0.15, 0.15), seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    train_idx, val_idx, test_idx = split_indices(dataset, ratios, seed)
    return dataset.take(train_idx), dataset.take(val_idx), dataset.take(test_idx)


def _resolve_concept_value(schema: ConceptSchema, concept: int, value: str, row: int) -> int:
    value = value.strip()
    cands = schema.concepts[concept].candidates
    if value.lstrip("-").isdigit():
        idx = int(value)
        if not 0 <= idx < len(cands):
            raise ManifestError(
                f"candidate index {idx} out of range for concept "
                f"{schema.concepts[concept].title!r}",
                row=row,
            )
        return idx
    try:
        return schema.candidate_index(concept, value)
    except KeyError:
        raise ManifestError(
            f"unknown candidate phrase {value!r} for concept "
            f"{schema.concepts[concept].title!r}",
            row=row,
        ) from None


def _resolve_disease(schema: ConceptSchema, value: str, row: int) -> int:
    value = value.strip()
    if value.lstrip("-").isdigit():
        idx = int(value)
        if not 0 <= idx < schema.n_classes:
            raise ManifestError(f"disease index {idx} out of range", row=row)
        return idx
    try:
        return schema.disease_classes.index(value)
    except ValueError:
        raise ManifestError(f"unknown disease class {value!r}", row=row) from None


def load_manifest(
    path: str | Path,
    schema: ConceptSchema,
    image_size: int,
    root: str | Path | None = None,
) -> Dataset:
    """Load a delimiter-separated manifest of user-supplied images.

    Expected header: ``image`` (path), one column per concept title, and
    ``disease``. Concept and disease values may be candidate phrases / class
    names or 0-based indices. Images are resized bilinearly to ``image_size``.
    """
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return Dataset(
                images=np.zeros((0, image_size, image_size, 3), dtype=np.float32),
                concept_labels=np.zeros((0, schema.n_concepts), dtype=np.int64),
                disease_labels=np.zeros((0,), dtype=np.int64),
            )
        required = ["image"] + [c.title for c in schema.concepts] + ["disease"]
        missing = [col for col in required if col not in reader.fieldnames]
        if missing:
            raise ManifestError(f"manifest header is missing columns {missing}")

        images, concept_rows, disease_rows = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if any(row.get(col) is None for col in required):
                raise ManifestError("row has fewer fields than the header", row=row_no)
            img_path = root / row["image"]
            try:
                with Image.open(img_path) as img:
                    img = img.convert("RGB").resize(
                        (image_size, image_size), Image.Resampling.BILINEAR
                    )
                    images.append(np.asarray(img, dtype=np.float32) / 255.0)
            except OSError as exc:
                raise ManifestError(f"cannot read image {img_path}: {exc}", row=row_no) from exc
            concept_rows.append(
                [
                    _resolve_concept_value(schema, i, row[c.title], row_no)
                    for i, c in enumerate(schema.concepts)
                ]
            )
            disease_rows.append(_resolve_disease(schema, row["disease"], row_no))

    if not images:
        return Dataset(
            images=np.zeros((0, image_size, image_size, 3), dtype=np.float32),
            concept_labels=np.zeros((0, schema.n_concepts), dtype=np.int64),
            disease_labels=np.zeros((0,), dtype=np.int64),
        )
    return Dataset(
        images=np.stack(images),
        concept_labels=np.array(concept_rows, dtype=np.int64),
        disease_labels=np.array(disease_rows, dtype=np.int64),
    )
