"""
Checkpoints binarios versionados del bi-encoder (PMBI) y del cross-encoder (PMCX).

PMBI (little-endian):
  magic b"PMBI" | version u32 | num_buckets u32 | dim u32
  E  num_buckets × dim f32 | P  dim × dim f32 | w  dim f32 | b  f32

PMCX (little-endian):
  magic b"PMCX" | version u32 | modo u8 (0 binary, 1 pairwise) | F u32 | h u32
  mean F f32 | scale F f32 | W1 h × F f32 | b1 h f32 | w2 h f32 | b2 f32

Cada checkpoint lleva un sidecar JSON (<fichero>.json) con hiperparámetros,
rng_seed y traza de pérdida.
"""

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from app.adapters.workdir import atomic_write_bytes, write_json
from app.core.errors import CheckpointError
from app.core.logging import get_logger
from app.services.crossfilter import CrossMode, CrossModel
from app.services.encoder import BiencoderModel, PrefilterModel

logger = get_logger(__name__)

VERSION = 1
_PMBI = struct.Struct("<4sIII")
_PMCX = struct.Struct("<4sIBII")
_MODES = {CrossMode.BINARY: 0, CrossMode.PAIRWISE: 1}


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _f32(*arrays: np.ndarray | float) -> bytes:
    return b"".join(np.ascontiguousarray(np.asarray(a, dtype="<f4")).tobytes() for a in arrays)


class _Reader:
    """Lectura secuencial de bloques f32 con control de truncado."""

    def __init__(self, raw: bytes, offset: int, source: str) -> None:
        self.raw = raw
        self.offset = offset
        self.source = source

    def take(self, *shape: int) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        end = self.offset + 4 * count
        if end > len(self.raw):
            raise CheckpointError(f"{self.source}: checkpoint truncado")
        arr = np.frombuffer(self.raw, dtype="<f4", count=count, offset=self.offset).astype(np.float64)
        self.offset = end
        return arr.reshape(shape) if shape else arr

    def finish(self) -> None:
        if self.offset != len(self.raw):
            raise CheckpointError(f"{self.source}: {len(self.raw) - self.offset} bytes sobrantes")


def _header(raw: bytes, fmt: struct.Struct, magic: bytes, source: str) -> tuple[Any, ...]:
    if len(raw) < fmt.size:
        raise CheckpointError(f"{source}: cabecera truncada")
    fields = fmt.unpack_from(raw, 0)
    if fields[0] != magic:
        raise CheckpointError(f"{source}: magic inválido {fields[0]!r}")
    if fields[1] != VERSION:
        raise CheckpointError(f"{source}: versión {fields[1]} no soportada")
    return fields


# ── Bi-encoder ────────────────────────────────────────────────────────────────

def save_biencoder(
    model: BiencoderModel,
    prefilter: PrefilterModel,
    path: str | Path,
    hyperparameters: dict[str, Any] | None = None,
) -> Path:
    p = Path(path)
    header = _PMBI.pack(b"PMBI", VERSION, model.num_buckets, model.dim)
    body = _f32(model.embedding_table, model.projection, prefilter.weight, prefilter.bias)
    atomic_write_bytes(p, header + body)
    write_json(sidecar_path(p), {
        "format": "PMBI",
        "version": VERSION,
        "rng_seed": model.rng_seed,
        "hyperparameters": hyperparameters or {},
        "loss_trace": model.loss_trace,
    })
    logger.info("Checkpoint bi-encoder → %s (%d × %d)", p.name, model.num_buckets, model.dim)
    return p


def load_biencoder(path: str | Path) -> tuple[BiencoderModel, PrefilterModel]:
    p = Path(path)
    raw = p.read_bytes()
    _, _, num_buckets, dim = _header(raw, _PMBI, b"PMBI", p.name)
    reader = _Reader(raw, _PMBI.size, p.name)
    table = reader.take(num_buckets, dim)
    projection = reader.take(dim, dim)
    weight = reader.take(dim)
    bias = float(reader.take(1)[0])
    reader.finish()

    meta: dict[str, Any] = {}
    side = sidecar_path(p)
    if side.exists():
        meta = json.loads(side.read_text("utf-8"))
    model = BiencoderModel(table, projection, int(meta.get("rng_seed", 0)), meta.get("loss_trace", []))
    return model, PrefilterModel(weight, bias)


# ── Cross-encoder ─────────────────────────────────────────────────────────────

def save_crossmodel(model: CrossModel, path: str | Path, hyperparameters: dict[str, Any] | None = None) -> Path:
    p = Path(path)
    header = _PMCX.pack(b"PMCX", VERSION, _MODES[model.mode], model.num_features, model.hidden)
    body = _f32(model.mean, model.scale, model.w1, model.b1, model.w2, model.b2)
    atomic_write_bytes(p, header + body)
    write_json(sidecar_path(p), {
        "format": "PMCX",
        "version": VERSION,
        "mode": model.mode.value,
        "rng_seed": model.rng_seed,
        "hyperparameters": hyperparameters or {},
        "loss_trace": model.loss_trace,
    })
    logger.info("Checkpoint cross-encoder (%s) → %s", model.mode.value, p.name)
    return p


def load_crossmodel(path: str | Path) -> CrossModel:
    p = Path(path)
    raw = p.read_bytes()
    _, _, mode_byte, n_features, hidden = _header(raw, _PMCX, b"PMCX", p.name)
    modes = {v: k for k, v in _MODES.items()}
    if mode_byte not in modes:
        raise CheckpointError(f"{p.name}: modo desconocido {mode_byte}")
    reader = _Reader(raw, _PMCX.size, p.name)
    mean = reader.take(n_features)
    scale = reader.take(n_features)
    w1 = reader.take(hidden, n_features)
    b1 = reader.take(hidden)
    w2 = reader.take(hidden)
    b2 = float(reader.take(1)[0])
    reader.finish()

    meta: dict[str, Any] = {}
    side = sidecar_path(p)
    if side.exists():
        meta = json.loads(side.read_text("utf-8"))
    return CrossModel(
        w1=w1, b1=b1, w2=w2, b2=b2, mean=mean, scale=scale,
        mode=modes[mode_byte],
        rng_seed=int(meta.get("rng_seed", 0)),
        loss_trace=list(meta.get("loss_trace", [])),
    )
