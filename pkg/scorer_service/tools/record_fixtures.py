"""Record canonical /score and /healthz exchanges from a live test app.

Writes the recorded contract to tests/data/remote_score_fixtures.json at
the repository root. The service's own suite replays each exchange against
a live app; the client package replays the same file through a mock
transport, so neither side needs the other running.

Cases with client_replay=false hold requests the client refuses to build
(reference-rule violations); client_rule names the rule under test.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi.testclient import TestClient

from scorer_service import create_app

FIXTURE_PATH = Path(__file__).resolve().parents[2] / "tests" / "data" / "remote_score_fixtures.json"

BLASER_ITEMS = [
    {"src": "The cat sleeps on the mat.", "hyp": "Le chat dort sur le tapis."},
    {"src": "Rain is expected tomorrow.", "hyp": "Il devrait pleuvoir demain."},
    {"src": "The delegation arrived late.", "hyp": "La délégation est arrivée en retard."},
]
PERMUTATION = [2, 0, 1]

COMET_ITEMS = [
    {"src": "Prices rose sharply in May.", "hyp": "Les prix ont fortement augmenté en mai."},
    {"src": "Prices rose sharply in May.", "hyp": ""},
]

METRICX_ITEMS = [
    {
        "src": "The committee approved the budget.",
        "hyp": "Le comité a approuvé le budget.",
        "ref": "Le comité a approuvé le budget.",
    },
    {
        "src": "The committee approved the budget.",
        "hyp": "",
        "ref": "Le comité a approuvé le budget.",
    },
]


def _case(client, name, payload, *, client_replay=True, client_rule=None):
    response = client.post("/score", json=payload)
    case = {
        "name": name,
        "client_replay": client_replay,
        "request": {"method": "POST", "path": "/score", "json": payload},
        "response": {"status": response.status_code, "json": response.json()},
    }
    if client_rule is not None:
        case["client_rule"] = client_rule
    return case


def main() -> None:
    with TestClient(create_app()) as client:
        cases = [
            _case(client, "blaser_batch", {"metric": "blaser_qe", "items": BLASER_ITEMS}),
            _case(
                client,
                "blaser_batch_permuted",
                {"metric": "blaser_qe", "items": [BLASER_ITEMS[i] for i in PERMUTATION]},
            ),
            _case(client, "cometkiwi_with_empty_hyp", {"metric": "cometkiwi", "items": COMET_ITEMS}),
            _case(
                client,
                "metricx_perfect_and_empty",
                {"metric": "metricx_hybrid", "items": METRICX_ITEMS},
            ),
            _case(
                client,
                "metricx_missing_ref",
                {"metric": "metricx_hybrid", "items": BLASER_ITEMS},
                client_replay=False,
                client_rule="ref_required",
            ),
            _case(
                client,
                "qe_with_forbidden_ref",
                {"metric": "cometkiwi", "items": METRICX_ITEMS},
                client_replay=False,
                client_rule="ref_forbidden",
            ),
        ]
        health = client.get("/healthz")
        cases.append(
            {
                "name": "healthz_loaded",
                "client_replay": True,
                "request": {"method": "GET", "path": "/healthz", "json": None},
                "response": {"status": health.status_code, "json": health.json()},
            }
        )

    FIXTURE_PATH.parent.mkdir(parents=True, exist_ok=True)
    FIXTURE_PATH.write_text(
        json.dumps({"protocol": "score-v1", "cases": cases}, ensure_ascii=False, indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    print(f"recorded {len(cases)} exchanges to {FIXTURE_PATH}")


if __name__ == "__main__":
    main()
