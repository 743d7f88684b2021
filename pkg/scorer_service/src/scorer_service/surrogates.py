"""Deterministic lexical stand-ins for the neural scoring models.

Each model maps (src, hyp[, ref]) to a float on the real metric's native
scale with the real metric's polarity. Exact values are lexical rather
than learned, but the served contract holds: scale bounds, hyp=ref near
the best end, empty hypotheses at the worst end, and bitwise determinism.
Scores round to 4 decimals so recorded exchanges replay exactly.
"""

from __future__ import annotations

from collections import Counter

ROUND_DIGITS = 4


def _tokens(text: str) -> list[str]:
    return text.split()


def _char_bigrams(text: str) -> Counter:
    normalized = " ".join(text.split())
    return Counter(normalized[i : i + 2] for i in range(len(normalized) - 1))


def _dice(a: Counter, b: Counter) -> float:
    """Multiset Dice coefficient; empty-vs-empty is a perfect match."""
    total_a, total_b = sum(a.values()), sum(b.values())
    if total_a == 0 and total_b == 0:
        return 1.0
    if total_a == 0 or total_b == 0:
        return 0.0
    overlap = sum(min(count, b[item]) for item, count in a.items())
    return 2.0 * overlap / (total_a + total_b)


def _length_affinity(n_src: int, n_hyp: int) -> float:
    if n_src == 0 and n_hyp == 0:
        return 1.0
    if n_src == 0 or n_hyp == 0:
        return 0.0
    return 2.0 * min(n_src, n_hyp) / (n_src + n_hyp)


def _qe_core(src: str, hyp: str) -> float:
    """Reference-free plausibility in [0, 1]; 0 for an empty hypothesis."""
    if not hyp.split():
        return 0.0
    affinity = _length_affinity(len(_tokens(src)), len(_tokens(hyp)))
    return 0.7 * affinity + 0.3 * _dice(_char_bigrams(src), _char_bigrams(hyp))


class SurrogateModel:
    """One resident scoring model."""

    name: str
    version: str
    needs_reference: bool

    def score(self, src: str, hyp: str, ref: str | None) -> float:
        raise NotImplementedError


class MetricXHybrid(SurrogateModel):
    """Error scale 0-25, higher = more errors; reference-based."""

    name = "metricx_hybrid"
    version = "metricx-24-hybrid-surrogate-1"
    needs_reference = True

    def score(self, src: str, hyp: str, ref: str | None) -> float:
        assert ref is not None
        overlap = 0.5 * _dice(Counter(_tokens(hyp)), Counter(_tokens(ref))) + 0.5 * _dice(
            _char_bigrams(hyp), _char_bigrams(ref)
        )
        return round(25.0 * (1.0 - overlap), ROUND_DIGITS)


class CometKiwi(SurrogateModel):
    """Quality estimation in [0, 1], higher = better; reference-free."""

    name = "cometkiwi"
    version = "comet-22-kiwi-surrogate-1"
    needs_reference = False

    def score(self, src: str, hyp: str, ref: str | None) -> float:
        return round(min(1.0, max(0.0, _qe_core(src, hyp))), ROUND_DIGITS)


class BlaserQE(SurrogateModel):
    """Quality estimation in [1, 5], higher = better; reference-free."""

    name = "blaser_qe"
    version = "blaser-2.0-qe-surrogate-1"
    needs_reference = False

    def score(self, src: str, hyp: str, ref: str | None) -> float:
        return round(1.0 + 4.0 * min(1.0, max(0.0, _qe_core(src, hyp))), ROUND_DIGITS)


MODEL_REGISTRY: dict[str, type[SurrogateModel]] = {
    cls.name: cls for cls in (MetricXHybrid, CometKiwi, BlaserQE)
}
