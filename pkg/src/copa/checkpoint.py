"""Checkpoint archive: named parameter tensors with shape headers, the model
configuration, the schema (and its hash), and a mandatory version field."""

from __future__ import annotations

from pathlib import Path

import torch

from .errors import CheckpointError
from .model import ConceptBottleneckModel, ModelConfig
from .schema import ConceptSchema, schema_from_dict

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    model: ConceptBottleneckModel,
    train_config: dict | None = None,
    extra: dict | None = None,
) -> None:
    state = model.state_dict()
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "schema": model.schema.to_dict(),
        "schema_hash": model.schema.hash(),
        "param_shapes": {name: tuple(t.shape) for name, t in state.items()},
        "state_dict": state,
        "train_config": train_config,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[ConceptBottleneckModel, ConceptSchema, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises a mix of pickle/zip errors
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})"
        )

    schema = schema_from_dict(payload["schema"])
    config = ModelConfig.from_dict(payload["model_config"])
    model = ConceptBottleneckModel(config, schema)

    state = payload["state_dict"]
    for name, shape in payload.get("param_shapes", {}).items():
        if name not in state or tuple(state[name].shape) != tuple(shape):
            raise CheckpointError(f"parameter {name!r} does not match its shape header")
    model.load_state_dict(state)
    model.eval()
    return model, schema, payload


def parameter_checksum(model: torch.nn.Module) -> str:
    """sha256 over all parameters and buffers in name order."""
    import hashlib

    h = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        h.update(name.encode("utf-8"))
        h.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
