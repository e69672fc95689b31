import pytest
from fastapi.testclient import TestClient

from rephase import atlas, config
from rephase.main import app

client = TestClient(app)


def test_cases():
    response = client.get("/cases")
    assert response.status_code == 200
    cases = response.json()
    assert cases["table4:1"]["kind"] == "fuel"
    assert len(cases) == 8


def test_time_solve():
    response = client.post("/time-solve", json={"dtf": -0.005, "amax": 0.1})
    assert response.status_code == 200
    body = response.json()
    assert body["delta_L"] == pytest.approx(0.44866, abs=5e-4)
    assert body["chi"] == pytest.approx(0.05)
    assert "profile" not in body


def test_time_solve_with_profile():
    response = client.post("/time-solve", json={"chi": 0.05, "profile_points": 5})
    assert response.status_code == 200
    assert len(response.json()["profile"]["L"]) == 5


@pytest.mark.parametrize("payload", [
    {"chi": 0.05, "dtf": -0.005},
    {"dtf": -0.005},
    {"chi": 0.05, "strategy": "guess"},
    {"chi": -1.0},
])
def test_time_solve_rejects_bad_input(payload):
    assert client.post("/time-solve", json=payload).status_code == 422


def test_fuel_solve_infeasible():
    response = client.post("/fuel-solve", json={"dL": 0.3, "dtf": -0.05})
    assert response.status_code == 422
    assert response.json()["detail"]["min_delta_L"] == pytest.approx(0.44866, abs=5e-4)


def test_atlas_query_without_atlas(monkeypatch):
    monkeypatch.setattr(config, "ATLAS_PATH", None)
    assert client.post("/atlas-query", json={"dL": 2.0, "eta": 0.5}).status_code == 404


def test_atlas_query(monkeypatch, tmp_path, make_grid):
    path = tmp_path / "fuel.csv"
    atlas.write_atlas(make_grid(), path)
    monkeypatch.setattr(config, "ATLAS_PATH", str(path))
    response = client.post("/atlas-query", json={"dL": 1.5, "eta": 0.45})
    assert response.status_code == 200
    body = response.json()
    assert body["candidates"][0]["source"] == "interpolated"
    assert body["J_norm"] == pytest.approx(0.55)


def test_status(monkeypatch, tmp_path, make_grid):
    monkeypatch.setattr(config, "ATLAS_PATH", None)
    status = client.get("/admin/status").json()
    assert status["version"].startswith(config.SOURCE_VERSION)
    assert status["atlas"]["exists"] is False

    path = tmp_path / "fuel.csv"
    atlas.write_atlas(make_grid(), path)
    monkeypatch.setattr(config, "ATLAS_PATH", str(path))
    status = client.get("/admin/status").json()
    assert status["atlas"]["exists"] is True
    assert status["atlas"]["epsilon"] == 0.1


def test_validate_unknown_case():
    assert client.post("/validate", json={"case": "table9:9"}).status_code == 422
