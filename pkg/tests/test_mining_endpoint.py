"""
Tests de endpoints de minado: /api/stages/{stage}, /api/dataset, /api/rouge,
/api/margin
"""

import pytest

from app.models.evaluation import SyntheticSpec
from app.models.pipeline import CrossTrainConfig, MarginConfig, PipelineConfig, TrainConfig
from app.services import evalharness, pipeline


@pytest.fixture
def empty_cfg(tmp_path, use_config):
    return use_config(PipelineConfig(work_dir=str(tmp_path / "work")))


@pytest.fixture
def toy_cfg(tmp_path, use_config):
    spec = SyntheticSpec(num_pairs=20, vocab_size=600, input_len=20, output_len=10,
                         distractor_count=30, seed_size=10, rng_seed=2)
    paths = evalharness.write_synthetic(evalharness.generate(spec), tmp_path / "data")
    cfg = PipelineConfig(
        x_corpus=str(paths["x"]), y_corpus=str(paths["y"]), seed_path=str(paths["seed"]),
        work_dir=str(tmp_path / "work"), min_doc_sentences=0, retention=1.0, final_top_n=10,
        biencoder=TrainConfig(steps=10, batch_size=5, num_buckets=1024, dim=16),
        cross=CrossTrainConfig(steps=10),
        margin=MarginConfig(k=3, top_per_input=2),
    )
    return use_config(cfg)


# ── POST /api/stages/{stage} ──────────────────────────────────────────────────

def test_etapa_sin_anteriores_409(client, empty_cfg):
    r = client.post("/api/stages/mine")
    assert r.status_code == 409
    assert "artefacto ausente" in r.json()["detail"]


def test_ingest_sin_corpus_400(client, empty_cfg):
    r = client.post("/api/stages/ingest")
    assert r.status_code == 400


def test_etapa_desconocida_422(client, empty_cfg):
    assert client.post("/api/stages/minar").status_code == 422


def test_ingest_devuelve_artefacto(client, toy_cfg):
    r = client.post("/api/stages/ingest")
    assert r.status_code == 200
    data = r.json()
    assert data["stage"] == "ingest"
    assert data["counters"]["records_out"] == 20
    assert set(data["outputs"]) == {"x", "y", "seed"}


# ── GET /api/dataset ──────────────────────────────────────────────────────────

def test_dataset_no_exportado_404(client, empty_cfg):
    assert client.get("/api/dataset").status_code == 404


def test_dataset_source_invalido_422(client, empty_cfg):
    assert client.get("/api/dataset", params={"source": "otro"}).status_code == 422


def test_dataset_con_limite(client, toy_cfg):
    pipeline.run_all(toy_cfg)
    r = client.get("/api/dataset", params={"limit": 2})
    assert r.status_code == 200
    pairs = r.json()["pairs"]
    assert [p["rank"] for p in pairs] == [1, 2][: len(pairs)]
    assert r.json()["manifest"]["task"] == "summarization"

    r = client.get("/api/dataset", params={"source": "biencoder"})
    assert r.status_code == 200
    assert all(p["stage"] == "biencoder" for p in r.json()["pairs"])


# ── POST /api/rouge ───────────────────────────────────────────────────────────

def test_rouge(client):
    r = client.post("/api/rouge", json={"candidate": "a b c", "source": "a b d"})
    assert r.status_code == 200
    data = r.json()
    assert data["r1"] == pytest.approx(2 / 3)
    assert data["r2"] == pytest.approx(0.5)
    assert data["rl"] == pytest.approx(2 / 3)


def test_rouge_candidato_sin_tokens_400(client):
    assert client.post("/api/rouge", json={"candidate": "...", "source": "a"}).status_code == 400


def test_rouge_candidato_vacio_422(client):
    assert client.post("/api/rouge", json={"candidate": "", "source": "a"}).status_code == 422


# ── POST /api/margin ──────────────────────────────────────────────────────────

def test_margin(client):
    r = client.post("/api/margin", json={
        "cos_xy": 0.9, "nx_cosines": [0.5, 0.5], "ny_cosines": [0.7, 0.7], "k": 2,
    })
    assert r.status_code == 200
    assert r.json() == {"score": pytest.approx(1.5), "degenerate": False}


def test_margin_degenerado(client):
    r = client.post("/api/margin", json={
        "cos_xy": 0.3, "nx_cosines": [0.5], "ny_cosines": [-0.5], "k": 1,
    })
    assert r.status_code == 200
    assert r.json() == {"score": None, "degenerate": True}


def test_margin_vecindario_mayor_que_k_400(client):
    r = client.post("/api/margin", json={
        "cos_xy": 0.3, "nx_cosines": [0.5, 0.4], "ny_cosines": [0.5], "k": 1,
    })
    assert r.status_code == 400
