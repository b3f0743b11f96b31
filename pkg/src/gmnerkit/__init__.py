"""Grounded multimodal NER pipeline toolkit.

Three cooperating stages: a linear-chain CRF trained on guideline-driven
synthetic data, entropy-based routing of uncertain predictions to an LLM
refiner, and visual grounding with retrieved multimodal in-context examples.
"""

from .types import (
    AnnotatedSample,
    BoundingBox,
    EntityType,
    GmnerTriplet,
    MentionSpan,
    Sentence,
    Token,
    build_schema,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedSample",
    "BoundingBox",
    "EntityType",
    "GmnerTriplet",
    "MentionSpan",
    "Sentence",
    "Token",
    "build_schema",
    "__version__",
]
