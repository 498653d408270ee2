"""Concept-bottleneck diagnosis with multilayer concept prompting and
test-time intervention."""

from .encoder import BackboneConfig
from .model import ConceptBottleneckModel, ModelConfig
from .schema import ConceptSchema, load_schema

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "ConceptBottleneckModel",
    "ConceptSchema",
    "ModelConfig",
    "load_schema",
    "__version__",
]
