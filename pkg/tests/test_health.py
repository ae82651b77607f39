"""
Tests de endpoints de sistema: /health, /api/stages
"""

import pytest

from app.models.pipeline import PipelineConfig


@pytest.fixture
def empty_workdir(tmp_path, use_config):
    use_config(PipelineConfig(work_dir=str(tmp_path / "work")))
    return tmp_path / "work"


def test_health_devuelve_ok(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json()["status"] == "ok"


def test_health_incluye_version(client):
    r = client.get("/health")
    assert r.json()["version"] == "1.0.0"


# ── /api/stages ───────────────────────────────────────────────────────────────

def test_stages_workdir_vacio(client, empty_workdir):
    r = client.get("/api/stages")
    assert r.status_code == 200
    data = r.json()
    assert data["work_dir"] == str(empty_workdir)
    assert list(data["stages"]) == [
        "ingest", "train", "embed", "index", "mine", "train_cross", "filter", "export",
    ]
    assert set(data["stages"].values()) == {"missing"}


def test_stages_config_invalido(client, monkeypatch, tmp_path):
    monkeypatch.setattr("app.routers.system.MINER_CONFIG", str(tmp_path / "no.env"))
    r = client.get("/api/stages")
    assert r.status_code == 400
