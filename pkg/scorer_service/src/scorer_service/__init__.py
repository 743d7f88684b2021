"""HTTP scoring service for translation quality metrics."""

from .service import DEFAULT_METRICS, ScoringEngine, create_app
from .surrogates import MODEL_REGISTRY

__all__ = ["DEFAULT_METRICS", "MODEL_REGISTRY", "ScoringEngine", "create_app"]
