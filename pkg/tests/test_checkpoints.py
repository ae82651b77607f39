"""
Tests de checkpoints.py: PMBI y PMCX (precisión f32), sidecars y ficheros
corruptos.
"""

import struct

import numpy as np
import pytest

from app.adapters.checkpoints import (
    load_biencoder,
    load_crossmodel,
    save_biencoder,
    save_crossmodel,
    sidecar_path,
)
from app.adapters.workdir import read_json
from app.core.errors import CheckpointError
from app.services.crossfilter import CrossMode, CrossModel
from app.services.encoder import BiencoderModel, PrefilterModel


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@pytest.fixture
def bi(tmp_path):
    model = BiencoderModel.initialize(16, 4, rng_seed=7)
    model.loss_trace = [2.0, 1.5]
    pref = PrefilterModel(np.array([0.1, -0.2, 0.3, 0.0]), 0.25)
    path = save_biencoder(model, pref, tmp_path / "bi.pmbi", {"steps": 2})
    return model, pref, path


@pytest.fixture
def cross(tmp_path):
    model = CrossModel.initialize(hidden=3, rng_seed=4, mode=CrossMode.PAIRWISE)
    model.loss_trace = [0.7]
    return model, save_crossmodel(model, tmp_path / "cx.pmcx")


class TestBiencoderCheckpoint:

    def test_carga_en_precision_f32(self, bi):
        model, pref, path = bi
        loaded, lpref = load_biencoder(path)
        assert np.array_equal(loaded.embedding_table, _f32(model.embedding_table))
        assert np.array_equal(loaded.projection, _f32(model.projection))
        assert np.array_equal(lpref.weight, _f32(pref.weight))
        assert lpref.bias == pytest.approx(0.25)

    def test_sidecar(self, bi):
        _, _, path = bi
        meta = read_json(sidecar_path(path))
        assert meta["format"] == "PMBI"
        assert meta["rng_seed"] == 7
        assert meta["hyperparameters"] == {"steps": 2}
        assert load_biencoder(path)[0].loss_trace == [2.0, 1.5]

    def test_truncado(self, bi):
        _, _, path = bi
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(CheckpointError):
            load_biencoder(path)

    def test_bytes_sobrantes(self, bi):
        _, _, path = bi
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(CheckpointError):
            load_biencoder(path)

    def test_magic_invalido(self, bi):
        _, _, path = bi
        path.write_bytes(b"PMCX" + path.read_bytes()[4:])
        with pytest.raises(CheckpointError):
            load_biencoder(path)

    def test_version_desconocida(self, bi):
        _, _, path = bi
        raw = path.read_bytes()
        path.write_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
        with pytest.raises(CheckpointError):
            load_biencoder(path)


class TestCrossCheckpoint:

    def test_carga_modo_y_pesos(self, cross):
        model, path = cross
        loaded = load_crossmodel(path)
        assert loaded.mode == CrossMode.PAIRWISE
        assert np.array_equal(loaded.w1, _f32(model.w1))
        assert np.array_equal(loaded.w2, _f32(model.w2))
        assert loaded.loss_trace == [0.7]
        assert loaded.rng_seed == 4

    def test_modo_desconocido(self, cross):
        _, path = cross
        raw = bytearray(path.read_bytes())
        raw[8] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_crossmodel(path)

    def test_cabecera_truncada(self, cross):
        _, path = cross
        path.write_bytes(path.read_bytes()[:6])
        with pytest.raises(CheckpointError):
            load_crossmodel(path)

    def test_sin_sidecar_usa_valores_por_defecto(self, cross):
        _, path = cross
        sidecar_path(path).unlink()
        loaded = load_crossmodel(path)
        assert loaded.loss_trace == []
        assert loaded.rng_seed == 0
