"""
Adaptador de ficheros de vectores PMV1 e índices IVF persistidos.

Formato PMV1 (little-endian, sin relleno):
  magic   4 bytes  b"PMV1"
  dim     u32
  count   u64
  ids     count × u64
  datos   count × dim × f32, row-major

Es también el punto de entrada de embeddings externos (p. ej. de un
transformer): cualquier fichero PMV1 válido puede sustituir al bi-encoder.
Al cargar se valida la norma unitaria; filas desviadas > UNIT_NORM_TOL se
renormalizan y se cuentan.
"""

import io
import struct
from pathlib import Path

import numpy as np

from app.adapters.workdir import atomic_write_bytes
from app.core.config import UNIT_NORM_TOL
from app.core.errors import VectorFileError
from app.core.logging import get_logger
from app.services.knn_index import ExactIndex, IvfIndex, VectorStore

logger = get_logger(__name__)

MAGIC = b"PMV1"
_HEADER = struct.Struct("<4sIQ")


def encode_vectors(store: VectorStore) -> bytes:
    header = _HEADER.pack(MAGIC, store.dim, len(store))
    ids = np.ascontiguousarray(store.ids, dtype="<u8").tobytes()
    data = np.ascontiguousarray(store.vectors, dtype="<f4").tobytes()
    return header + ids + data


def decode_vectors(raw: bytes, tol: float = UNIT_NORM_TOL, source: str = "<bytes>") -> VectorStore:
    if len(raw) < _HEADER.size:
        raise VectorFileError(f"{source}: cabecera truncada")
    magic, dim, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise VectorFileError(f"{source}: magic inválido {magic!r}")
    if dim == 0:
        raise VectorFileError(f"{source}: dim = 0")
    expected = _HEADER.size + count * 8 + count * dim * 4
    if len(raw) != expected:
        raise VectorFileError(f"{source}: tamaño {len(raw)} ≠ esperado {expected}")

    off = _HEADER.size
    ids = np.frombuffer(raw, dtype="<u8", count=count, offset=off).astype(np.uint64)
    off += count * 8
    vecs = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=off).reshape(count, dim)
    if len(np.unique(ids)) != count:
        raise VectorFileError(f"{source}: ids duplicados")
    return VectorStore.from_rows(ids, vecs.astype(np.float32), tol)


def save_vectors(store: VectorStore, path: str | Path) -> Path:
    p = Path(path)
    atomic_write_bytes(p, encode_vectors(store))
    return p


def load_vectors(path: str | Path, tol: float = UNIT_NORM_TOL) -> VectorStore:
    """Lee un PMV1; VectorFileError si está truncado o malformado."""
    p = Path(path)
    store = decode_vectors(p.read_bytes(), tol, source=p.name)
    logger.info("Vectores %s: %d × %d", p.name, len(store), store.dim)
    return store


# ── Índices ───────────────────────────────────────────────────────────────────
# El store va siempre en PMV1; el IVF añade cuantizador y asignaciones en .npy
# (formato sin marcas de tiempo: la salida es byte-idéntica entre ejecuciones).

def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def save_index(index: ExactIndex | IvfIndex, path: str | Path) -> list[Path]:
    """Guarda store (path.pmv) y, si es IVF, path.centroids.npy + path.assign.npy."""
    base = Path(path)
    written = [save_vectors(index.store, base.with_suffix(".pmv"))]
    if isinstance(index, IvfIndex):
        for suffix, arr in ((".centroids.npy", index.centroids), (".assign.npy", index.assignments)):
            target = base.with_suffix(suffix)
            atomic_write_bytes(target, _npy_bytes(arr))
            written.append(target)
    return written


def load_index(path: str | Path, kmeans_seed: int = 0, workers: int = 1) -> ExactIndex | IvfIndex:
    base = Path(path)
    store = load_vectors(base.with_suffix(".pmv"))
    centroids = base.with_suffix(".centroids.npy")
    if not centroids.exists():
        return ExactIndex(store, workers)
    return IvfIndex(
        store,
        centroids=np.load(centroids, allow_pickle=False),
        assignments=np.load(base.with_suffix(".assign.npy"), allow_pickle=False),
        kmeans_seed=kmeans_seed,
        workers=workers,
    )
