"""Concept vocabulary: concept titles, candidate phrases, disease classes, prompt template.

The schema is loaded from a YAML document and is immutable afterwards; every
other module indexes concepts and candidates against the ordering defined here.
All indices in this package are 0-based.
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import SchemaError

_PLACEHOLDERS = {"title", "candidate"}


@dataclass(frozen=True)
class ConceptDef:
    """One concept and its ordered candidate phrases.

    Candidate order is canonical: ground-truth labels and every score vector
    refer to positions in ``candidates``.
    """

    title: str
    candidates: tuple[str, ...]


@dataclass(frozen=True)
class ConceptSchema:
    concepts: tuple[ConceptDef, ...]
    disease_classes: tuple[str, ...]
    template: str
    modality_preamble: str

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    @property
    def n_classes(self) -> int:
        return len(self.disease_classes)

    def candidate_counts(self) -> tuple[int, ...]:
        return tuple(len(c.candidates) for c in self.concepts)

    def concept_index(self, title: str) -> int:
        for i, c in enumerate(self.concepts):
            if c.title == title:
                return i
        raise KeyError(f"unknown concept title {title!r}")

    def candidate_index(self, concept: int, phrase: str) -> int:
        cands = self.concepts[concept].candidates
        try:
            return cands.index(phrase)
        except ValueError:
            raise KeyError(
                f"unknown candidate {phrase!r} for concept {self.concepts[concept].title!r}"
            ) from None

    def render_prompt(self, concept: int, candidate: int) -> str:
        """Deterministic prompt text for one (concept, candidate) pair.

        The concept title is lower-cased inside the template; the candidate
        phrase is used verbatim.
        """
        if not 0 <= concept < self.n_concepts:
            raise IndexError(f"concept index {concept} out of range [0, {self.n_concepts})")
        cdef = self.concepts[concept]
        if not 0 <= candidate < len(cdef.candidates):
            raise IndexError(
                f"candidate index {candidate} out of range [0, {len(cdef.candidates)}) "
                f"for concept {cdef.title!r}"
            )
        body = self.template.format(
            title=cdef.title.lower(), candidate=cdef.candidates[candidate]
        )
        return f"{self.modality_preamble}, {body}"

    def to_dict(self) -> dict:
        return {
            "modality_preamble": self.modality_preamble,
            "template": self.template,
            "disease_classes": list(self.disease_classes),
            "concepts": [
                {"title": c.title, "candidates": list(c.candidates)} for c in self.concepts
            ],
        }

    def hash(self) -> str:
        """Stable hex digest of the schema content."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _validate_template(template: str) -> None:
    fields = [f for _, f, _, _ in string.Formatter().parse(template) if f is not None]
    if sorted(fields) != sorted(_PLACEHOLDERS):
        raise SchemaError(
            f"template must contain the placeholders {{title}} and {{candidate}} "
            f"exactly once each, got fields {fields}",
            path="template",
        )


def schema_from_dict(doc: dict) -> ConceptSchema:
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a mapping")
    for key in ("modality_preamble", "template", "disease_classes", "concepts"):
        if key not in doc:
            raise SchemaError("missing required key", path=key)

    _validate_template(str(doc["template"]))

    classes = doc["disease_classes"]
    if not isinstance(classes, list) or len(classes) < 2:
        raise SchemaError("need at least 2 disease classes", path="disease_classes")
    classes = [str(c) for c in classes]
    if len(set(classes)) != len(classes):
        raise SchemaError("disease class names must be unique", path="disease_classes")

    raw_concepts = doc["concepts"]
    if not isinstance(raw_concepts, list) or len(raw_concepts) < 1:
        raise SchemaError("need at least 1 concept", path="concepts")

    concepts: list[ConceptDef] = []
    titles: set[str] = set()
    for i, item in enumerate(raw_concepts):
        path = f"concepts[{i}]"
        if not isinstance(item, dict) or "title" not in item or "candidates" not in item:
            raise SchemaError("concept entries need 'title' and 'candidates'", path=path)
        title = str(item["title"])
        if title in titles:
            raise SchemaError(f"duplicate concept title {title!r}", path=f"{path}.title")
        titles.add(title)
        cands = item["candidates"]
        if not isinstance(cands, list) or len(cands) < 2:
            raise SchemaError(
                "each concept needs at least 2 candidate phrases", path=f"{path}.candidates"
            )
        cands = [str(c) for c in cands]
        if len(set(cands)) != len(cands):
            raise SchemaError("candidate phrases must be unique", path=f"{path}.candidates")
        concepts.append(ConceptDef(title=title, candidates=tuple(cands)))

    return ConceptSchema(
        concepts=tuple(concepts),
        disease_classes=tuple(classes),
        template=str(doc["template"]),
        modality_preamble=str(doc["modality_preamble"]),
    )


def load_schema(path: str | Path) -> ConceptSchema:
    """Load and validate a schema YAML file, preserving declared ordering."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read schema file: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"schema file is not valid YAML: {exc}") from exc
    return schema_from_dict(doc)
