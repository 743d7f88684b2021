"""Scoring service endpoints: POST /score and GET /healthz.

Error mapping: 400 for schema violations (malformed body, oversize batch),
422 for semantic violations (reference-rule breaches, unserved metric),
503 while models are still loading. Scores come back raw on each metric's
native scale; polarity is the client's concern.
"""

from __future__ import annotations

import logging
import threading
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .surrogates import MODEL_REGISTRY, SurrogateModel

logger = logging.getLogger(__name__)

DEFAULT_METRICS = ("blaser_qe", "cometkiwi", "metricx_hybrid")
DEFAULT_MAX_BATCH = 256


class RefRuleViolation(ValueError):
    """An item carries or omits a reference against the metric's rule."""


class UnservedMetric(ValueError):
    """The requested metric is not resident in this service."""


class BatchTooLarge(ValueError):
    """The batch exceeds the configured maximum."""


class NotReady(RuntimeError):
    """Models are still loading."""


class ScoreItem(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    src: str
    hyp: str
    ref: str | None = None


class ScoreBatch(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    metric: str
    items: list[ScoreItem]
    model_version: str | None = None


class ScoringEngine:
    """Resident models plus a lock: one replica, requests queue behind it."""

    def __init__(
        self,
        metrics: tuple[str, ...] = DEFAULT_METRICS,
        max_batch: int = DEFAULT_MAX_BATCH,
    ) -> None:
        self.configured = tuple(metrics)
        self.max_batch = max_batch
        self.models: dict[str, SurrogateModel] = {}
        self.loaded = False
        self._lock = threading.Lock()

    def load(self) -> None:
        for name in self.configured:
            model_cls = MODEL_REGISTRY.get(name)
            if model_cls is None:
                logger.warning("unknown metric %r in config; not loaded", name)
                continue
            self.models[name] = model_cls()
        self.loaded = True
        logger.info("models resident: %s", sorted(self.models))

    def score(self, batch: ScoreBatch) -> tuple[list[float], str]:
        if not self.loaded:
            raise NotReady("models are loading")
        if len(batch.items) > self.max_batch:
            raise BatchTooLarge(f"batch of {len(batch.items)} exceeds max {self.max_batch}")
        model = self.models.get(batch.metric)
        if model is None:
            raise UnservedMetric(f"metric {batch.metric!r} is not served here")
        for i, item in enumerate(batch.items):
            if model.needs_reference and item.ref is None:
                raise RefRuleViolation(f"{batch.metric} requires a reference (item {i})")
            if not model.needs_reference and item.ref is not None:
                raise RefRuleViolation(
                    f"{batch.metric} is reference-free; drop the reference (item {i})"
                )
        with self._lock:
            scores = [model.score(item.src, item.hyp, item.ref) for item in batch.items]
        return scores, batch.model_version or model.version


def create_app(
    metrics: tuple[str, ...] = DEFAULT_METRICS,
    max_batch: int = DEFAULT_MAX_BATCH,
) -> FastAPI:
    engine = ScoringEngine(metrics=metrics, max_batch=max_batch)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        engine.load()
        yield

    app = FastAPI(title="scorer-service", lifespan=lifespan)
    app.state.engine = engine

    @app.exception_handler(RequestValidationError)
    async def schema_violation(request: Request, exc: RequestValidationError):
        return JSONResponse({"detail": exc.errors()}, status_code=400)

    @app.post("/score")
    def score(batch: ScoreBatch):
        try:
            scores, version = engine.score(batch)
        except NotReady as exc:
            return JSONResponse({"detail": str(exc)}, status_code=503)
        except BatchTooLarge as exc:
            return JSONResponse({"detail": str(exc)}, status_code=400)
        except (RefRuleViolation, UnservedMetric) as exc:
            return JSONResponse({"detail": str(exc)}, status_code=422)
        return {"scores": scores, "model_version": version}

    @app.get("/healthz")
    def healthz():
        body = {
            "status": "ok" if engine.loaded else "loading",
            "loaded_metrics": sorted(engine.models),
        }
        return JSONResponse(body, status_code=200 if engine.loaded else 503)

    return app
