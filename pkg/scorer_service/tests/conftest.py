from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from scorer_service import create_app


@pytest.fixture()
def client():
    """Client against a fully loaded service (lifespan has run)."""
    with TestClient(create_app()) as client:
        yield client


@pytest.fixture()
def cold_client():
    """Client against a service whose models have not loaded yet."""
    return TestClient(create_app())
