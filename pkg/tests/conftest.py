from __future__ import annotations

import json
from pathlib import Path

import pytest

from mtforge.core import LangPair, ParallelRecord
from mtforge.gateway import Gateway, GenerationParams, MockBackend

DATA_DIR = Path(__file__).parent / "data"
TEMPLATE_DIR = DATA_DIR / "templates"


def read_fixture(name: str) -> str:
    return (TEMPLATE_DIR / name).read_text(encoding="utf-8")


def load_metric_fixture() -> dict:
    return json.loads((DATA_DIR / "metric_fixture.json").read_text(encoding="utf-8"))


@pytest.fixture
def pair() -> LangPair:
    return LangPair(src="English", tgt="French", src_code="eng_Latn", tgt_code="fra_Latn")


@pytest.fixture
def record(pair: LangPair) -> ParallelRecord:
    return ParallelRecord(
        id="rec-0",
        source="The committee approved the new budget yesterday.",
        target="Le comité a approuvé le nouveau budget hier.",
        pair=pair,
    )


@pytest.fixture
def records(pair: LangPair) -> list[ParallelRecord]:
    rows = [
        ("A quick brown fox jumps over the lazy dog.", "Un renard brun rapide saute par-dessus le chien paresseux."),
        ("The market opens at nine in the morning.", "Le marché ouvre à neuf heures du matin."),
        ("She finished the report before the deadline.", "Elle a terminé le rapport avant la date limite."),
        ("Rain is expected across the region this weekend.", "De la pluie est attendue dans la région ce week-end."),
        ("The museum added two new galleries last year.", "Le musée a ajouté deux nouvelles galeries l'année dernière."),
        ("Students presented their projects to the panel.", "Les étudiants ont présenté leurs projets au jury."),
    ]
    return [
        ParallelRecord(id=f"rec-{i}", source=s, target=t, pair=pair)
        for i, (s, t) in enumerate(rows)
    ]


@pytest.fixture
def params() -> GenerationParams:
    return GenerationParams()


@pytest.fixture
def echo_gateway(records) -> Gateway:
    """Mock gateway replying with each record's reference, else a fixed line."""
    rules = [{"contains": r.source, "reply": r.target} for r in records]
    rules.append({"default": True, "reply": "Une traduction simple."})
    return Gateway(backend=MockBackend(rules))


def make_gateway(script) -> Gateway:
    return Gateway(backend=MockBackend(script))


class ScriptedScorer:
    """Maps each hypothesis to a fixed score; records what it was asked."""

    def __init__(self, table: dict[str, float]) -> None:
        self.table = table
        self.calls: list[list] = []

    def score_batch(self, requests):
        self.calls.append(list(requests))
        return [self.table[r.hypothesis] for r in requests]
