"""
Tests del pipeline por etapas sobre corpus sintéticos pequeños: ejecución
completa, validación de artefactos (ausentes / obsoletos), determinismo y
scorers externos.

Los tests marcados slow reproducen los criterios de calidad del minado a
escala reducida (pytest -m slow).
"""

import json
from fractions import Fraction

import pytest

from app.core.errors import ConfigError, MissingArtifactError, StaleArtifactError
from app.models import Stage, Task
from app.models.evaluation import SyntheticSpec
from app.models.pipeline import STAGE_ORDER, CrossTrainConfig, MarginConfig, PipelineConfig, PipelineStage, TrainConfig
from app.services import dataset, evalharness
from app.services.miner import load_candidates
from app.services.pipeline import (
    Workdir,
    check_upstream,
    derived_seed,
    load_dataset,
    run_all,
    run_stage,
    seed_examples,
    stage_config_hash,
    stage_status,
)


def _synthetic(tmp_path, spec):
    paths = evalharness.write_synthetic(evalharness.generate(spec), tmp_path / "data")
    return paths


def _config(paths, work_dir, **kw):
    base = dict(
        task=Task.SUMMARIZATION,
        x_corpus=str(paths["x"]),
        y_corpus=str(paths["y"]),
        seed_path=str(paths["seed"]),
        work_dir=str(work_dir),
        min_doc_sentences=0,
        retention=1.0,
        final_top_n=30,
        biencoder=TrainConfig(steps=30, batch_size=8, n_random_negs=2, num_buckets=1024, dim=16),
        cross=CrossTrainConfig(steps=30),
        margin=MarginConfig(k=4, top_per_input=2),
    )
    base.update(kw)
    return PipelineConfig(**base)


TOY = SyntheticSpec(
    num_pairs=40, vocab_size=800, input_len=20, output_len=10,
    distractor_count=60, seed_size=16, rng_seed=3,
)


@pytest.fixture
def toy_paths(tmp_path):
    return _synthetic(tmp_path, TOY)


@pytest.fixture
def toy_run(tmp_path, toy_paths):
    cfg = _config(toy_paths, tmp_path / "work")
    return cfg, run_all(cfg)


# ══════════════════════════════════════════════════════════════════════
#  Hash de config y semillas
# ══════════════════════════════════════════════════════════════════════

class TestStageHash:

    def test_campos_posteriores_no_invalidan_etapas_previas(self, toy_paths, tmp_path):
        a = _config(toy_paths, tmp_path / "w")
        b = a.model_copy(update={"final_top_n": 7})
        assert stage_config_hash(a, PipelineStage.TRAIN) == stage_config_hash(b, PipelineStage.TRAIN)
        assert stage_config_hash(a, PipelineStage.FILTER) != stage_config_hash(b, PipelineStage.FILTER)

    def test_cambio_previo_invalida_posteriores(self, toy_paths, tmp_path):
        a = _config(toy_paths, tmp_path / "w")
        b = a.model_copy(update={"retention": 0.5})
        assert stage_config_hash(a, PipelineStage.TRAIN) == stage_config_hash(b, PipelineStage.TRAIN)
        assert stage_config_hash(a, PipelineStage.EXPORT) != stage_config_hash(b, PipelineStage.EXPORT)

    def test_work_dir_no_forma_parte_del_hash(self, toy_paths, tmp_path):
        a = _config(toy_paths, tmp_path / "w1")
        b = _config(toy_paths, tmp_path / "w2")
        assert stage_config_hash(a, PipelineStage.EXPORT) == stage_config_hash(b, PipelineStage.EXPORT)

    def test_semilla_derivada(self):
        assert derived_seed(5, 7) == 12
        assert derived_seed(2 ** 64 - 1, 2) == 1

    def test_workdir_vacio(self):
        with pytest.raises(ConfigError):
            Workdir("")


# ══════════════════════════════════════════════════════════════════════
#  Ejecución completa
# ══════════════════════════════════════════════════════════════════════

class TestRunAll:

    def test_todas_las_etapas_en_orden(self, toy_run):
        cfg, artifacts = toy_run
        assert [a.stage for a in artifacts] == list(STAGE_ORDER)
        assert set(stage_status(cfg).values()) == {"ok"}

    def test_contadores_se_conservan(self, toy_run):
        _, artifacts = toy_run
        for a in artifacts:
            c = a.counters
            assert c["records_out"] + c["filtered"] + c["degenerate"] == c["records_in"], a.stage

    def test_export_rankeado(self, toy_run):
        cfg, _ = toy_run
        ds = load_dataset(cfg)
        assert 0 < len(ds.pairs) <= cfg.final_top_n
        assert [p.rank for p in ds.pairs] == list(range(1, len(ds.pairs) + 1))
        assert all(p.stage == Stage.CROSSENCODER for p in ds.pairs)
        scores = [p.cross_score for p in ds.pairs]
        assert scores == sorted(scores, reverse=True)
        assert ds.manifest["size"] == len(ds.pairs)
        assert ds.manifest["task"] == "summarization"

    def test_export_de_ablacion_biencoder(self, toy_run):
        cfg, _ = toy_run
        ds = load_dataset(cfg, "biencoder")
        assert ds.pairs
        assert all(p.stage == Stage.BIENCODER for p in ds.pairs)
        margins = [p.margin for p in ds.pairs]
        assert margins == sorted(margins, reverse=True)

    def test_artefactos_registran_hashes(self, toy_run):
        cfg, _ = toy_run
        wd = Workdir(cfg.work_dir)
        ingest = wd.read_artifact(PipelineStage.INGEST)
        assert set(ingest.input_hashes) == {"x_corpus", "y_corpus", "seed_path"}
        mine = wd.read_artifact(PipelineStage.MINE)
        assert "index/shard_0000/x.pmv" in mine.input_hashes
        assert set(mine.output_hashes) == {"candidates"}

    def test_seed_examples(self, toy_run):
        cfg, _ = toy_run
        assert len(seed_examples(cfg)) == TOY.seed_size

    def test_evaluacion_del_export(self, toy_run, toy_paths):
        cfg, _ = toy_run
        gold = evalharness.load_gold(toy_paths["gold"])
        metrics = dataset.evaluate(load_dataset(cfg).pairs, gold, ks=[1, 4], ns=[10])
        assert 0 <= metrics.recall[1] <= metrics.recall[4] <= 1

    def test_ivf_por_shard(self, toy_paths, tmp_path):
        cfg = _config(toy_paths, tmp_path / "ivf", index_kind="ivf", nlist=4,
                      margin=MarginConfig(k=4, top_per_input=2, nprobe=4))
        run_all(cfg)
        info = Workdir(cfg.work_dir).read_artifact(PipelineStage.INDEX).info["shards"]
        assert info[0]["x_nlist"] == 4
        assert (tmp_path / "ivf" / "index" / "shard_0000" / "y.centroids.npy").is_file()
        assert load_dataset(cfg).pairs


# ══════════════════════════════════════════════════════════════════════
#  Determinismo
# ══════════════════════════════════════════════════════════════════════

class TestDeterminism:

    def test_dos_ejecuciones_byte_identicas(self, toy_paths, tmp_path):
        a = _config(toy_paths, tmp_path / "a")
        b = _config(toy_paths, tmp_path / "b")
        run_all(a)
        run_all(b)
        for stage in STAGE_ORDER:
            pa = Workdir(a.work_dir).path(stage, "artifact.json")
            pb = Workdir(b.work_dir).path(stage, "artifact.json")
            assert pa.read_bytes() == pb.read_bytes(), stage
        assert (
            Workdir(a.work_dir).path(PipelineStage.EXPORT, "mined.jsonl").read_bytes()
            == Workdir(b.work_dir).path(PipelineStage.EXPORT, "mined.jsonl").read_bytes()
        )

    def test_otra_semilla_otro_modelo(self, toy_paths, tmp_path):
        a = _config(toy_paths, tmp_path / "a")
        b = _config(toy_paths, tmp_path / "b", rng_seed=99)
        for cfg in (a, b):
            run_stage(cfg, PipelineStage.INGEST)
            run_stage(cfg, PipelineStage.TRAIN)
        ha = Workdir(a.work_dir).read_artifact(PipelineStage.TRAIN).output_hashes["biencoder"]
        hb = Workdir(b.work_dir).read_artifact(PipelineStage.TRAIN).output_hashes["biencoder"]
        assert ha != hb


# ══════════════════════════════════════════════════════════════════════
#  Artefactos ausentes u obsoletos
# ══════════════════════════════════════════════════════════════════════

class TestArtifactChecks:

    def test_sin_ingesta(self, toy_paths, tmp_path):
        cfg = _config(toy_paths, tmp_path / "empty")
        with pytest.raises(MissingArtifactError):
            run_stage(cfg, PipelineStage.TRAIN)
        assert set(stage_status(cfg).values()) == {"missing"}

    def test_indice_borrado(self, toy_run):
        cfg, _ = toy_run
        Workdir(cfg.work_dir).path(PipelineStage.INDEX, "artifact.json").unlink()
        with pytest.raises(MissingArtifactError):
            run_stage(cfg, PipelineStage.MINE)
        status = stage_status(cfg)
        assert status["embed"] == "ok"
        assert status["index"] == "missing"
        assert status["mine"] == "stale"

    def test_fichero_de_salida_borrado(self, toy_run):
        cfg, _ = toy_run
        Workdir(cfg.work_dir).path(PipelineStage.EMBED, "y.pmv").unlink()
        with pytest.raises(MissingArtifactError):
            check_upstream(cfg, PipelineStage.INDEX)

    def test_config_cambiado(self, toy_run):
        cfg, _ = toy_run
        changed = cfg.model_copy(update={"margin": MarginConfig(k=3, top_per_input=2)})
        with pytest.raises(StaleArtifactError):
            run_stage(changed, PipelineStage.FILTER)
        status = stage_status(changed)
        assert status["index"] == "ok"
        assert status["mine"] == "stale"
        assert status["export"] == "stale"

    def test_solo_cambia_top_n(self, toy_run):
        cfg, _ = toy_run
        status = stage_status(cfg.model_copy(update={"final_top_n": 5}))
        assert status["train_cross"] == "ok"
        assert status["filter"] == "stale"
        assert status["export"] == "stale"

    def test_salida_manipulada(self, toy_run):
        cfg, _ = toy_run
        path = Workdir(cfg.work_dir).path(PipelineStage.MINE, "candidates.jsonl")
        path.write_text(path.read_text("utf-8") + "\n", encoding="utf-8")
        with pytest.raises(StaleArtifactError):
            run_stage(cfg, PipelineStage.TRAIN_CROSS)

    def test_corpus_de_entrada_cambiado(self, toy_run, toy_paths):
        cfg, _ = toy_run
        with open(toy_paths["x"], "a", encoding="utf-8") as f:
            f.write(json.dumps({"text": "w1 w2 w3"}) + "\n")
        with pytest.raises(StaleArtifactError):
            run_stage(cfg, PipelineStage.TRAIN)

    def test_reejecutar_etapa_revalida_posteriores(self, toy_run):
        cfg, _ = toy_run
        run_stage(cfg.model_copy(update={"final_top_n": 5}), PipelineStage.FILTER)
        status = stage_status(cfg)
        assert status["filter"] == "stale"

    def test_dataset_sin_export(self, toy_paths, tmp_path):
        cfg = _config(toy_paths, tmp_path / "nothing")
        with pytest.raises(MissingArtifactError):
            load_dataset(cfg)
        with pytest.raises(ConfigError):
            load_dataset(cfg, "otro")


# ══════════════════════════════════════════════════════════════════════
#  Scorer externo
# ══════════════════════════════════════════════════════════════════════

class TestExternalScores:

    def test_scores_desde_fichero(self, toy_run, tmp_path):
        cfg, _ = toy_run
        cands = load_candidates(Workdir(cfg.work_dir).path(PipelineStage.MINE, "candidates.jsonl"))
        scored = cands[:5]
        scores = tmp_path / "scores.jsonl"
        scores.write_text(
            "".join(json.dumps({"pair_key": c.pair_key, "score": float(i)}) + "\n" for i, c in enumerate(scored)),
            encoding="utf-8",
        )
        file_cfg = cfg.model_copy(update={"cross_scorer": "file", "cross_scores_path": str(scores)})
        art = run_stage(file_cfg, PipelineStage.FILTER)
        assert art.counters["records_out"] == 5
        assert art.counters["degenerate"] == len(cands) - 5
        kept = load_candidates(Workdir(cfg.work_dir).path(PipelineStage.FILTER, "reranked.jsonl"))
        assert [c.pair_key for c in kept] == [c.pair_key for c in reversed(scored)]

    def test_fichero_no_configurado(self, toy_run):
        cfg, _ = toy_run
        with pytest.raises(ConfigError):
            run_stage(cfg.model_copy(update={"cross_scorer": "file"}), PipelineStage.FILTER)


# ══════════════════════════════════════════════════════════════════════
#  Reading comprehension
# ══════════════════════════════════════════════════════════════════════

PASSAGES = [
    "Gustave Eiffel designed the tower in Paris. It opened on March 31, 1889.",
    "The Golden Gate Bridge opened in San Francisco on May 27, 1937.",
    "Marie Curie won the Nobel Prize in 1903 with Pierre Curie.",
    "Neil Armstrong walked on the Moon on July 20, 1969.",
    "The Berlin Wall fell on November 9, 1989 after weeks of protests.",
    "Alexander Fleming discovered penicillin in London in 1928.",
]
QUESTIONS = [
    "Who designed the tower in Paris?",
    "When did the Golden Gate Bridge open?",
    "Who shared the prize with Marie Curie?",
    "When did Armstrong walk on the Moon?",
    "When did the Berlin Wall fall?",
    "Who discovered penicillin?",
]
ANSWERS = ["Gustave Eiffel", "May 27, 1937", "Pierre Curie", "July 20, 1969"]


@pytest.fixture
def rc_config(tmp_path):
    def jsonl(name, rows):
        p = tmp_path / name
        p.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        return str(p)

    seed = [
        {"x": {"text": q}, "y": {"text": p, "answer": a}}
        for q, p, a in zip(QUESTIONS, PASSAGES, ANSWERS)
    ]
    return PipelineConfig(
        task=Task.READING_COMPREHENSION,
        x_corpus=jsonl("q.jsonl", [{"text": q} for q in QUESTIONS]),
        y_corpus=jsonl("p.jsonl", [{"text": p} for p in PASSAGES]),
        seed_path=jsonl("seed.jsonl", seed),
        work_dir=str(tmp_path / "work"),
        retention=1.0,
        final_top_n=10,
        biencoder=TrainConfig(steps=10, batch_size=4, n_random_negs=2, synthetic_per_type=1,
                              num_buckets=1024, dim=16),
        cross=CrossTrainConfig(steps=10),
        margin=MarginConfig(k=2, top_per_input=2),
    )


class TestReadingComprehension:

    def test_run_all_con_spans(self, rc_config):
        artifacts = run_all(rc_config)
        assert artifacts[-1].stage == PipelineStage.EXPORT
        ingest = artifacts[0]
        assert ingest.counters["y_records"] > len(PASSAGES)     # un output por span
        assert artifacts[5].info["mode"] == "binary"
        ds = load_dataset(rc_config)
        for p in ds.pairs:
            begin, end = p.answer_span
            assert 0 <= begin < end <= len(p.y_text)

    def test_respuesta_en_la_pregunta_se_filtra(self, rc_config):
        run_all(rc_config)
        ds = load_dataset(rc_config, "biencoder")
        for p in ds.pairs:
            begin, end = p.answer_span
            assert p.y_text[begin:end].casefold() not in p.x_text.casefold()


# ══════════════════════════════════════════════════════════════════════
#  Calidad del minado (lentos)
# ══════════════════════════════════════════════════════════════════════

QUALITY_DIM = 1024


def _quality_config(paths, work_dir, final_top_n):
    return PipelineConfig(
        task=Task.SUMMARIZATION,
        x_corpus=str(paths["x"]),
        y_corpus=str(paths["y"]),
        seed_path=str(paths["seed"]),
        work_dir=str(work_dir),
        min_doc_sentences=0,
        retention=1.0,
        final_top_n=final_top_n,
        biencoder=TrainConfig(steps=100, num_buckets=16384, dim=QUALITY_DIM),
        cross=CrossTrainConfig(steps=300),
    )


@pytest.mark.slow
class TestMiningQuality:

    def test_biencoder_recupera_pares_separables(self, tmp_path):
        paths = _synthetic(tmp_path, SyntheticSpec.separable_preset())
        cfg = _quality_config(paths, tmp_path / "work", 500)
        run_all(cfg)
        gold = evalharness.load_gold(paths["gold"])
        cands = load_candidates(Workdir(cfg.work_dir).path(PipelineStage.MINE, "candidates.jsonl"))
        metrics = dataset.evaluate(cands, gold, ks=[4], ns=[])
        assert len(gold) == 1000
        assert metrics.recall[4] >= Fraction(9, 10)

    def test_cross_encoder_supera_la_trampa_lexica(self, tmp_path):
        paths = _synthetic(tmp_path, SyntheticSpec.lexical_trap_preset())
        cfg = _quality_config(paths, tmp_path / "work", 500)
        run_all(cfg)
        gold = evalharness.load_gold(paths["gold"])
        full = load_dataset(cfg, "full").pairs
        bienc = load_dataset(cfg, "biencoder").pairs
        p_cross = dataset.evaluate(full, gold, ks=[], ns=[100]).precision[100]
        p_bi = dataset.evaluate(bienc, gold, ks=[], ns=[100]).precision[100]
        assert p_cross - p_bi >= 0.10

        report = evalharness.abstractiveness_report(full + bienc, limit=100)
        assert report.stages["crossencoder"].mean_r2 < report.stages["biencoder"].mean_r2
