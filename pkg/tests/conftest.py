from __future__ import annotations

import numpy as np
import pytest
import torch

from copa.data import SyntheticConfig, generate_synthetic, synthetic_schema
from copa.encoder import BackboneConfig
from copa.harness import build_model
from copa.model import ModelConfig


@pytest.fixture(scope="session")
def schema():
    return synthetic_schema()


@pytest.fixture()
def tiny_config():
    """Small but structurally complete: 2 layers, width 16, 16x16 images."""
    return ModelConfig(
        backbone=BackboneConfig(
            layers=2, dim=16, heads=2, image_size=16, patch_size=4, num_classes=2
        )
    )


@pytest.fixture()
def tiny_model(schema, tiny_config):
    return build_model(schema, tiny_config, seed=0)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SyntheticConfig(count=64, image_size=16, seed=7))


def rand_unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


@pytest.fixture()
def torch_seed():
    torch.manual_seed(1234)
    return 1234
