"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field


class ConceptInfo(BaseModel):
    title: str
    candidates: list[str]


class SchemaResponse(BaseModel):
    concepts: list[ConceptInfo]
    disease_classes: list[str]
    template: str
    modality_preamble: str
    schema_hash: str


class DiagnosisPayload(BaseModel):
    classes: list[str]
    probabilities: list[float]
    predicted: int
    predicted_class: str
    confidence: float


class ConceptScorePayload(BaseModel):
    index: int
    title: str
    candidates: list[str]
    logits: list[float]
    probabilities: list[float]
    predicted: int
    predicted_phrase: str
    confidence: float


class HeatmapPayload(BaseModel):
    concept: str
    grid: list[list[float]]


class PredictRequest(BaseModel):
    image_b64: Optional[str] = None
    sample_id: Optional[int] = None
    session: Optional[str] = None


class PredictResponse(BaseModel):
    session: str
    schema_hash: str
    diagnosis: DiagnosisPayload
    gating_alpha: list[float]
    selector_weights: list[list[float]]
    concepts: list[ConceptScorePayload]
    heatmaps: list[HeatmapPayload]
    patch_grid: int
    image_size: int


class EditSpec(BaseModel):
    concept: Union[int, str]
    mode: Literal["positive", "negative"]
    candidate: Union[int, str]


class AppliedEdit(BaseModel):
    concept: int
    mode: Literal["positive", "negative"]
    candidate: int


class InterveneRequest(BaseModel):
    session: str
    edits: list[EditSpec] = Field(default_factory=list)


class InterveneResponse(BaseModel):
    session: str
    pre: DiagnosisPayload
    post: DiagnosisPayload
    concepts_pre: list[ConceptScorePayload]
    concepts_post: list[ConceptScorePayload]
    active_edits: list[AppliedEdit]
    changed: bool


class ResetRequest(BaseModel):
    session: str


class ResetResponse(BaseModel):
    session: str
    cleared: bool


class ChecksumResponse(BaseModel):
    sha256: str


class HealthResponse(BaseModel):
    status: str
    checkpoint_loaded: bool
