import pytest
from fastapi.testclient import TestClient

from app.core.config import settings
from app.models.fem import SolverBackend, StudyRequest
from main import app


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["status"] == "operational"


def test_health(client):
    data = client.get("/health").json()
    assert data["status"] == "healthy"
    assert data["defaults"]["sigma"] == 10.0


def test_mesh_summary(client):
    response = client.get("/api/v1/mesh/1")
    assert response.status_code == 200
    data = response.json()["data"]
    assert (data["vertices"], data["edges"], data["faces"], data["cells"]) == (8, 19, 18, 6)
    assert data["euler_characteristic"] == 1


@pytest.mark.parametrize("n", [0, 33])
def test_mesh_out_of_range(client, n):
    response = client.get(f"/api/v1/mesh/{n}")
    assert response.status_code == 422
    body = response.json()
    assert body["success"] is False
    assert body["error"] == "ConfigurationError"


def test_study_rejects_descending_levels(client):
    response = client.post("/api/v1/studies", json={"levels": [4, 2]})
    assert response.status_code == 422


def test_study_rejects_nonpositive_sigma(client):
    response = client.post("/api/v1/studies", json={"method": "nitsche", "sigma": 0, "levels": [1]})
    assert response.status_code == 422


def test_small_study(client):
    response = client.post("/api/v1/studies", json={"method": "mixed", "levels": [1]})
    assert response.status_code == 200
    body = response.json()
    assert body["success"] is True
    assert len(body["data"]["levels"]) == 1
    assert body["markdown"].startswith("**mixed method")
    assert body["reference"] == []


def test_verification(client):
    response = client.post("/api/v1/verification", json={"levels": [1], "orders": [1]})
    assert response.status_code == 200
    body = response.json()
    assert body["passed"] is True
    assert body["data"]["levels"] == [1]


def test_verification_rejects_unknown_order(client):
    response = client.post("/api/v1/verification", json={"orders": [3]})
    assert response.status_code == 422


def test_levels_capped_by_served_maximum(client, monkeypatch):
    monkeypatch.setattr(settings, "MAX_SERVED_N", 2)
    assert client.post("/api/v1/studies", json={"levels": [1, 4]}).status_code == 422
    assert client.post("/api/v1/verification", json={"levels": [1, 4]}).status_code == 422
    assert client.get("/api/v1/mesh/4").status_code == 422


def test_study_solver_follows_configured_backend():
    request = StudyRequest()
    assert request.solver is None
    assert StudyRequest(solver="minres").solver == SolverBackend.MINRES
