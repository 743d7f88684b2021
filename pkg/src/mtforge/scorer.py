"""Uniform candidate scoring over native metrics and a remote service.

Native sentence BLEU / chrF++ run in-process; the neural quality metrics
are served by a separate HTTP service speaking a small JSON protocol.
Best-candidate selection picks the argmax under the metric's polarity
with ties resolved toward the ground truth.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass
from typing import Sequence

import httpx

from .metrics import sentence_bleu, sentence_chrfpp

logger = logging.getLogger(__name__)

HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"

METRIC_POLARITY = {
    "blaser_qe": HIGHER_BETTER,
    "cometkiwi": HIGHER_BETTER,
    "metricx_hybrid": LOWER_BETTER,
    "bleu_sent": HIGHER_BETTER,
    "chrfpp_sent": HIGHER_BETTER,
}
REFERENCE_BASED = frozenset({"metricx_hybrid", "bleu_sent", "chrfpp_sent"})
NATIVE_METRICS = frozenset({"bleu_sent", "chrfpp_sent"})

GROUND_TRUTH = "ground_truth"
ATTEMPT = "attempt"


class MetricUnsupported(ValueError):
    """The backend cannot score the requested metric."""


class RemoteUnavailable(RuntimeError):
    """The scoring service stayed unreachable after retries."""


@dataclass(frozen=True)
class ScoreRequest:
    """One (source, hypothesis[, reference]) scoring job."""

    source: str
    hypothesis: str
    metric: str
    reference: str | None = None

    def __post_init__(self) -> None:
        if self.metric not in METRIC_POLARITY:
            raise ValueError(f"unknown metric {self.metric!r}")
        ref_based = self.metric in REFERENCE_BASED
        if ref_based and self.reference is None:
            raise ValueError(f"{self.metric} requires a reference")
        if not ref_based and self.reference is not None:
            raise ValueError(f"{self.metric} is reference-free; drop the reference")


@dataclass(frozen=True)
class SelectionProvenance:
    """Where the selected candidate came from."""

    kind: str  # ground_truth | attempt
    index: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (GROUND_TRUTH, ATTEMPT):
            raise ValueError(f"unknown provenance kind {self.kind!r}")
        if (self.kind == ATTEMPT) != (self.index is not None):
            raise ValueError("attempt provenance carries an index; ground truth does not")

    def label(self) -> str:
        return self.kind if self.index is None else f"{self.kind}({self.index})"


class NativeScorer:
    """In-process sentence BLEU / chrF++."""

    def score_batch(self, requests: Sequence[ScoreRequest]) -> list[float]:
        scores: list[float] = []
        for req in requests:
            if req.metric not in NATIVE_METRICS:
                raise MetricUnsupported(f"{req.metric} needs the remote scorer")
            assert req.reference is not None
            if req.metric == "bleu_sent":
                scores.append(sentence_bleu(req.hypothesis, req.reference))
            else:
                scores.append(sentence_chrfpp(req.hypothesis, req.reference))
        return scores


class RemoteScorer:
    """Client for the scoring service; batches, retries, caches by content."""

    def __init__(
        self,
        base_url: str,
        batch_size: int = 64,
        max_retries: int = 5,
        backoff_base: float = 1.0,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
        sleeper=time.sleep,
        rng: random.Random | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleeper
        self._rng = rng or random.Random()
        self.model_version: str | None = None
        self._cache: dict[tuple[str, str, str, str, str | None], float] = {}

    def healthz(self) -> bool:
        try:
            return self._client.get(f"{self.base_url}/healthz").status_code == 200
        except httpx.HTTPError:
            return False

    def _post_batch(self, metric: str, items: list[dict[str, str]]) -> list[float]:
        payload = {"metric": metric, "items": items}
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._client.post(f"{self.base_url}/score", json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if resp.status_code == 200:
                    body = resp.json()
                    self.model_version = body["model_version"]
                    scores = body["scores"]
                    if len(scores) != len(items):
                        raise RemoteUnavailable("scorer returned a misaligned batch")
                    return [float(s) for s in scores]
                if resp.status_code in (400, 422):
                    raise RemoteUnavailable(f"scorer rejected the batch: {resp.text}")
                last_error = RemoteUnavailable(f"scorer returned HTTP {resp.status_code}")
            delay = self.backoff_base * (2**attempt) * (0.5 + self._rng.random())
            logger.warning(
                "scorer call failed (%s); retry %d/%d in %.1fs",
                last_error,
                attempt + 1,
                self.max_retries,
                delay,
            )
            self._sleep(delay)
        raise RemoteUnavailable(f"scorer unreachable after {self.max_retries} tries: {last_error}")

    def score_batch(self, requests: Sequence[ScoreRequest]) -> list[float]:
        results: dict[int, float] = {}
        pending: list[tuple[int, ScoreRequest]] = []
        version = self.model_version or ""
        for i, req in enumerate(requests):
            key = (req.metric, version, req.source, req.hypothesis, req.reference)
            if key in self._cache:
                results[i] = self._cache[key]
            else:
                pending.append((i, req))
        # one metric per HTTP batch
        by_metric: dict[str, list[tuple[int, ScoreRequest]]] = {}
        for i, req in pending:
            by_metric.setdefault(req.metric, []).append((i, req))
        for metric, group in by_metric.items():
            for start in range(0, len(group), self.batch_size):
                chunk = group[start : start + self.batch_size]
                items = []
                for _, req in chunk:
                    item = {"src": req.source, "hyp": req.hypothesis}
                    if req.reference is not None:
                        item["ref"] = req.reference
                    items.append(item)
                scores = self._post_batch(metric, items)
                version = self.model_version or ""
                for (i, req), score in zip(chunk, scores):
                    results[i] = score
                    self._cache[(metric, version, req.source, req.hypothesis, req.reference)] = score
        return [results[i] for i in range(len(requests))]


def score_batch(requests: Sequence[ScoreRequest], scorer) -> list[float]:
    """Order-preserving scores for a request batch."""
    if not requests:
        return []
    return scorer.score_batch(requests)


def select_best(
    ground_truth: str,
    attempts: Sequence[str],
    source: str,
    metric: str,
    scorer,
) -> tuple[str, SelectionProvenance]:
    """QE argmax over {ground truth} plus attempts; ties keep the ground truth."""
    if metric in REFERENCE_BASED:
        raise MetricUnsupported(f"{metric} needs a reference; selection is QE-only")
    if not attempts:
        return ground_truth, SelectionProvenance(GROUND_TRUTH)
    candidates = [ground_truth, *attempts]
    requests = [ScoreRequest(source=source, hypothesis=c, metric=metric) for c in candidates]
    scores = score_batch(requests, scorer)
    higher = METRIC_POLARITY[metric] == HIGHER_BETTER
    best = 0
    for i in range(1, len(candidates)):
        if (scores[i] > scores[best]) if higher else (scores[i] < scores[best]):
            best = i
    if best == 0:
        return ground_truth, SelectionProvenance(GROUND_TRUTH)
    return candidates[best], SelectionProvenance(ATTEMPT, best - 1)
