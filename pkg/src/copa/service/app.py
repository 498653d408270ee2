"""Local HTTP service exposing prediction, explanation, and live intervention.

One checkpoint is loaded for the lifetime of the app; model parameters are
never mutated by any request. Intervention edits live in in-memory sessions
(TTL-evicted) and are applied on top of the session's cached base prediction.
"""

from __future__ import annotations

import base64
import binascii
import io
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import HTTPException, RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from ..alignment import predict_concepts
from ..checkpoint import load_checkpoint, parameter_checksum
from ..data import Dataset, load_dataset
from ..explain import explanation_payload
from ..intervention import InterventionSpec, intervene_on_output
from ..model import ConceptBottleneckModel, ModelOutput
from ..schema import ConceptSchema
from . import schemas as api

MAX_IMAGE_B64 = 12_000_000  # characters; larger uploads get 413
DEFAULT_SESSION_TTL = 30 * 60.0


def _error(status: int, code: str, message: str, detail: object = None) -> HTTPException:
    return HTTPException(status, detail={"code": code, "message": message, "detail": detail})


@dataclass
class Session:
    base_output: ModelOutput
    base_payload: dict
    edits: dict[int, tuple[str, int]] = field(default_factory=dict)
    last_access: float = field(default_factory=time.monotonic)


@dataclass
class ServiceState:
    model: ConceptBottleneckModel | None = None
    schema: ConceptSchema | None = None
    checksum: str = ""
    dataset: Dataset | None = None
    ttl: float = DEFAULT_SESSION_TTL
    sessions: dict[str, Session] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def require_model(self) -> ConceptBottleneckModel:
        if self.model is None:
            raise _error(503, "no_checkpoint", "no checkpoint is loaded")
        return self.model

    def evict_expired(self) -> None:
        now = time.monotonic()
        with self.lock:
            stale = [sid for sid, s in self.sessions.items() if now - s.last_access > self.ttl]
            for sid in stale:
                del self.sessions[sid]

    def get_session(self, session_id: str) -> Session:
        with self.lock:
            session = self.sessions.get(session_id)
            if session is None:
                raise _error(404, "unknown_session", f"unknown session {session_id!r}")
            session.last_access = time.monotonic()
            return session


def _decode_image(image_b64: str, image_size: int) -> torch.Tensor:
    if len(image_b64) > MAX_IMAGE_B64:
        raise _error(413, "image_too_large", "encoded image exceeds the size limit")
    try:
        raw = base64.b64decode(image_b64, validate=True)
    except (binascii.Error, ValueError):
        raise _error(400, "bad_image", "image_b64 is not valid base64") from None
    try:
        with Image.open(io.BytesIO(raw)) as img:
            img = img.convert("RGB").resize((image_size, image_size), Image.Resampling.BILINEAR)
            pixels = np.asarray(img, dtype=np.float32) / 255.0
    except Exception:
        raise _error(400, "bad_image", "image_b64 does not decode to a readable image") from None
    return torch.from_numpy(pixels)


def _concept_payload(
    schema: ConceptSchema, concept: int, logits: torch.Tensor, probs: torch.Tensor
) -> api.ConceptScorePayload:
    """Score payload for one concept from (1, k) logit/probability rows."""
    pred_idx, confidence = predict_concepts([probs])
    cdef = schema.concepts[concept]
    predicted = int(pred_idx[0, 0])
    return api.ConceptScorePayload(
        index=concept,
        title=cdef.title,
        candidates=list(cdef.candidates),
        logits=[float(v) for v in logits[0]],
        probabilities=[float(v) for v in probs[0]],
        predicted=predicted,
        predicted_phrase=cdef.candidates[predicted],
        confidence=float(confidence[0, 0]),
    )


def _diagnosis_payload(schema: ConceptSchema, probs: torch.Tensor) -> api.DiagnosisPayload:
    predicted = int(probs.argmax())
    return api.DiagnosisPayload(
        classes=list(schema.disease_classes),
        probabilities=[float(v) for v in probs],
        predicted=predicted,
        predicted_class=schema.disease_classes[predicted],
        confidence=float(probs[predicted]),
    )


def _resolve_edit(schema: ConceptSchema, edit: api.EditSpec) -> tuple[int, str, int]:
    if isinstance(edit.concept, str):
        try:
            concept = schema.concept_index(edit.concept)
        except KeyError as exc:
            raise _error(400, "bad_edit", str(exc)) from None
    else:
        concept = edit.concept
        if not 0 <= concept < schema.n_concepts:
            raise _error(400, "bad_edit", f"concept index {concept} out of range")
    if isinstance(edit.candidate, str):
        try:
            candidate = schema.candidate_index(concept, edit.candidate)
        except KeyError as exc:
            raise _error(400, "bad_edit", str(exc)) from None
    else:
        candidate = edit.candidate
        k = len(schema.concepts[concept].candidates)
        if not 0 <= candidate < k:
            raise _error(400, "bad_edit", f"candidate index {candidate} out of range")
    return concept, edit.mode, candidate


def create_app(
    checkpoint_path: str | Path | None = None,
    data_path: str | Path | None = None,
    session_ttl: float = DEFAULT_SESSION_TTL,
    cors_origins: list[str] | None = None,
) -> FastAPI:
    state = ServiceState(ttl=session_ttl)
    if checkpoint_path is not None:
        model, schema, _ = load_checkpoint(checkpoint_path)
        state.model = model
        state.schema = schema
        state.checksum = parameter_checksum(model)
    if data_path is not None:
        state.dataset = load_dataset(data_path)

    app = FastAPI(title="copa", version="1")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(HTTPException)
    async def _http_error(_: Request, exc: HTTPException):
        body = exc.detail
        if not isinstance(body, dict) or "code" not in body:
            body = {"code": "error", "message": str(exc.detail), "detail": None}
        return JSONResponse(status_code=exc.status_code, content=body)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={
                "code": "validation_error",
                "message": "request body failed validation",
                "detail": exc.errors(),
            },
        )

    @app.get("/v1/health", response_model=api.HealthResponse)
    def health() -> api.HealthResponse:
        return api.HealthResponse(status="ok", checkpoint_loaded=state.model is not None)

    @app.get("/v1/schema", response_model=api.SchemaResponse)
    def get_schema() -> api.SchemaResponse:
        state.require_model()
        schema = state.schema
        return api.SchemaResponse(
            concepts=[
                api.ConceptInfo(title=c.title, candidates=list(c.candidates))
                for c in schema.concepts
            ],
            disease_classes=list(schema.disease_classes),
            template=schema.template,
            modality_preamble=schema.modality_preamble,
            schema_hash=schema.hash(),
        )

    @app.get("/v1/checksum", response_model=api.ChecksumResponse)
    def checksum() -> api.ChecksumResponse:
        state.require_model()
        return api.ChecksumResponse(sha256=state.checksum)

    @app.post("/v1/predict", response_model=api.PredictResponse)
    def predict(req: api.PredictRequest) -> api.PredictResponse:
        """Run the full pipeline on one image and cache it as the session's
        base prediction. A fresh predict replaces the base and clears any
        intervention edits accumulated for the session."""
        model = state.require_model()
        state.evict_expired()
        if (req.image_b64 is None) == (req.sample_id is None):
            raise _error(400, "bad_request", "provide exactly one of image_b64 or sample_id")
        if req.image_b64 is not None:
            image = _decode_image(req.image_b64, model.config.backbone.image_size)
        else:
            if state.dataset is None:
                raise _error(404, "no_dataset", "no dataset is loaded for sample_id lookups")
            if not 0 <= req.sample_id < len(state.dataset):
                raise _error(404, "unknown_sample", f"sample_id {req.sample_id} out of range")
            image = torch.from_numpy(state.dataset.images[req.sample_id])

        output = model.predict(image.unsqueeze(0))
        payload = explanation_payload(model, state.schema, output, index=0)
        session_id = req.session or uuid.uuid4().hex
        with state.lock:
            state.sessions[session_id] = Session(base_output=output, base_payload=payload)

        return api.PredictResponse(
            session=session_id,
            schema_hash=payload["schema_hash"],
            diagnosis=api.DiagnosisPayload(**payload["diagnosis"]),
            gating_alpha=payload["gating_alpha"],
            selector_weights=payload["selector_weights"],
            concepts=[api.ConceptScorePayload(**c) for c in payload["concepts"]],
            heatmaps=[api.HeatmapPayload(**h) for h in payload["heatmaps"]],
            patch_grid=payload["patch_grid"],
            image_size=payload["image_size"],
        )

    @app.post("/v1/intervene", response_model=api.InterveneResponse)
    def intervene(req: api.InterveneRequest) -> api.InterveneResponse:
        """Apply concept edits on top of the session's base prediction.

        Edits accumulate within the session until /v1/reset; a new edit on an
        already-edited concept replaces the previous one. Two edits naming the
        same concept inside a single request conflict (409).
        """
        model = state.require_model()
        state.evict_expired()
        session = state.get_session(req.session)

        resolved = [_resolve_edit(state.schema, e) for e in req.edits]
        touched = [c for c, _, _ in resolved]
        if len(set(touched)) != len(touched):
            raise _error(409, "conflicting_edits", "multiple edits target the same concept")

        with state.lock:
            for concept, mode, candidate in resolved:
                session.edits[concept] = (mode, candidate)
            active = dict(session.edits)

        specs = [
            InterventionSpec(concept=c, mode=m, candidate=j)
            for c, (m, j) in sorted(active.items())
        ]
        result = intervene_on_output(model, session.base_output, specs)

        touched_set = sorted(result.post_probs)
        base = session.base_output
        pre_concepts = [
            _concept_payload(state.schema, i, base.concept_logits[i], result.pre_probs[i])
            for i in touched_set
        ]
        post_concepts = [
            _concept_payload(state.schema, i, base.concept_logits[i], result.post_probs[i])
            for i in touched_set
        ]

        return api.InterveneResponse(
            session=req.session,
            pre=_diagnosis_payload(state.schema, result.pre.probs[0]),
            post=_diagnosis_payload(state.schema, result.post.probs[0]),
            concepts_pre=pre_concepts,
            concepts_post=post_concepts,
            active_edits=[
                api.AppliedEdit(concept=c, mode=m, candidate=j)
                for c, (m, j) in sorted(active.items())
            ],
            changed=result.changed,
        )

    @app.post("/v1/reset", response_model=api.ResetResponse)
    def reset(req: api.ResetRequest) -> api.ResetResponse:
        """Clear the session's edits; the cached base prediction stays."""
        state.require_model()
        session = state.get_session(req.session)
        with state.lock:
            session.edits.clear()
        return api.ResetResponse(session=req.session, cleared=True)

    return app


def serve(
    checkpoint_path: str | Path,
    data_path: str | Path | None = None,
    host: str = "127.0.0.1",
    port: int = 8000,
    session_ttl: float = DEFAULT_SESSION_TTL,
) -> None:
    import uvicorn

    app = create_app(checkpoint_path, data_path, session_ttl)
    uvicorn.run(app, host=host, port=port)
