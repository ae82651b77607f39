"""
Tests de settings.py: fichero clave=valor (python-dotenv), bloques con
prefijo, overrides y hash del config.
"""

import pytest

from app.core.errors import ConfigError
from app.core.settings import config_hash, load_config, parse_override
from app.models import Task


@pytest.fixture
def env_file(tmp_path):
    p = tmp_path / "pipeline.env"
    p.write_text(
        "# config de prueba\n"
        "task=reading_comprehension\n"
        "retention=0.5\n"
        "biencoder.learning_rate=0.05\n"
        "biencoder.num_buckets=1024\n"
        "margin.k=6\n"
        "margin.top_per_input=3\n"
        "index_kind=ivf\n",
        encoding="utf-8",
    )
    return p


# ══════════════════════════════════════════════════════════════════════
#  load_config
# ══════════════════════════════════════════════════════════════════════

class TestLoadConfig:

    def test_fichero_con_bloques(self, env_file, tmp_path):
        cfg = load_config(env_file, work_dir=tmp_path / "w")
        assert cfg.task == Task.READING_COMPREHENSION
        assert cfg.retention == 0.5
        assert cfg.biencoder.learning_rate == 0.05
        assert cfg.biencoder.num_buckets == 1024
        assert cfg.margin.k == 6
        assert cfg.margin.top_per_input == 3
        assert cfg.index_kind == "ivf"
        assert cfg.work_dir == str(tmp_path / "w")

    def test_valores_por_defecto_en_bloques(self, env_file, tmp_path):
        cfg = load_config(env_file, work_dir=tmp_path)
        assert cfg.biencoder.steps == 500
        assert cfg.cross.hidden > 0

    def test_overrides_ganan_al_fichero(self, env_file, tmp_path):
        cfg = load_config(env_file, ["retention=0.25", "margin.k = 8"], work_dir=tmp_path)
        assert cfg.retention == 0.25
        assert cfg.margin.k == 8

    def test_seed_global(self, tmp_path):
        assert load_config(None, work_dir=tmp_path, seed=42).rng_seed == 42

    def test_workdir_por_defecto(self, monkeypatch):
        monkeypatch.setattr("app.core.settings.MINER_WORKDIR", "/tmp/miner-test")
        assert load_config().work_dir == "/tmp/miner-test"

    def test_workdir_del_fichero(self, tmp_path):
        p = tmp_path / "c.env"
        p.write_text("work_dir=/data/run1\n", encoding="utf-8")
        assert load_config(p).work_dir == "/data/run1"

    def test_fichero_inexistente(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "no.env")

    def test_valor_invalido(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(None, ["retention=1.5"], work_dir=tmp_path)

    def test_buckets_no_potencia_de_dos(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(None, ["biencoder.num_buckets=1000"], work_dir=tmp_path)

    def test_fanout_mayor_que_k(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(None, ["margin.k=2", "margin.top_per_input=3"], work_dir=tmp_path)

    def test_clave_choca_con_escalar(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(None, ["task=summarization", "task.x=1"], work_dir=tmp_path)


# ══════════════════════════════════════════════════════════════════════
#  Overrides y hash
# ══════════════════════════════════════════════════════════════════════

class TestOverrides:

    def test_parse(self):
        assert parse_override(" margin.k = 4 ") == ("margin.k", "4")
        assert parse_override("x_corpus=a=b.jsonl") == ("x_corpus", "a=b.jsonl")

    @pytest.mark.parametrize("raw", ["sin_igual", "=4"])
    def test_override_invalido(self, raw):
        with pytest.raises(ConfigError):
            parse_override(raw)


class TestConfigHash:

    def test_no_depende_del_workdir(self, tmp_path):
        a = load_config(None, work_dir=tmp_path / "a")
        b = load_config(None, work_dir=tmp_path / "b")
        assert config_hash(a) == config_hash(b)

    def test_cambia_con_cualquier_campo(self, tmp_path):
        a = load_config(None, work_dir=tmp_path)
        b = load_config(None, ["cross.steps=10"], work_dir=tmp_path)
        assert config_hash(a) != config_hash(b)
        assert len(config_hash(a)) == 64
