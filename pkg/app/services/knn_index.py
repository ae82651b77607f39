"""
Índices top-k por coseno sobre vectores unitarios (MIPS = coseno).

ExactIndex: producto escalar contra todo el store, en lotes de SEARCH_BATCH.
IvfIndex:   cuantizador grueso k-means (KMEANS_ITERATIONS iteraciones, init
             con puntos aleatorios sembrados) + listas invertidas; se sondean
             las nprobe listas más cercanas y se hace top-k exacto sobre su unión.

Los scores se calculan en float64 y se redondean a precisión float32: así el
orden no depende del orden de suma del BLAS. Empates: id ascendente.
Los índices son inmutables: search es puro y seguro entre hilos.
"""

from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from app.core.config import KMEANS_ITERATIONS, SEARCH_BATCH, UNIT_NORM_TOL
from app.core.errors import ConfigError, DimensionMismatchError
from app.core.logging import get_logger
from app.services.ports import SearchIndex
from app.utils.validation import check_finite, renormalize_rows

logger = get_logger(__name__)

IndexKind = Literal["exact", "ivf"]


# ═══════════════════════════════════════════
#  Tipos
# ═══════════════════════════════════════════

@dataclass(frozen=True)
class VectorStore:
    """Matriz count × dim de filas unitarias (float32) con ids paralelos (uint64)."""
    vectors: np.ndarray
    ids: np.ndarray
    renormalized: int = 0
    _row: dict[int, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise DimensionMismatchError(f"se esperaba matriz 2D; recibido {self.vectors.shape}")
        if self.ids.shape != (self.vectors.shape[0],):
            raise DimensionMismatchError(
                f"{self.ids.shape[0]} ids para {self.vectors.shape[0]} vectores"
            )
        self._row.update({int(i): n for n, i in enumerate(self.ids.tolist())})
        if len(self._row) != self.ids.shape[0]:
            raise ConfigError("ids duplicados en el VectorStore")

    @classmethod
    def from_rows(
        cls,
        ids: list[int] | np.ndarray,
        vectors: np.ndarray,
        tol: float = UNIT_NORM_TOL,
    ) -> "VectorStore":
        """Construye validando norma unitaria; filas desviadas > tol se renormalizan."""
        vecs = np.ascontiguousarray(vectors, dtype=np.float32)
        if vecs.ndim != 2:
            raise DimensionMismatchError(f"se esperaba matriz 2D; recibido {vecs.shape}")
        check_finite("vectors", vecs)
        fixed = 0
        if vecs.shape[0]:
            vecs, fixed = renormalize_rows(vecs, tol)
        if fixed:
            logger.warning("%d vector(es) renormalizados (desvío > %g)", fixed, tol)
        return cls(vectors=vecs, ids=np.asarray(ids, dtype=np.uint64).reshape(-1), renormalized=fixed)

    @classmethod
    def empty(cls, dim: int) -> "VectorStore":
        return cls(vectors=np.zeros((0, dim), dtype=np.float32), ids=np.zeros(0, dtype=np.uint64))

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    def row(self, record_id: int) -> int:
        return self._row[int(record_id)]

    def vector(self, record_id: int) -> np.ndarray:
        return self.vectors[self._row[int(record_id)]]

    def __contains__(self, record_id: object) -> bool:
        return isinstance(record_id, (int, np.integer)) and int(record_id) in self._row

    def take(self, record_ids: list[int]) -> "VectorStore":
        """Sub-store con los ids dados, en ese orden."""
        rows = [self._row[int(i)] for i in record_ids]
        return VectorStore(vectors=self.vectors[rows], ids=self.ids[rows])


@dataclass(frozen=True)
class Neighborhood:
    """Top-k de una consulta: cosenos descendentes, empates por id ascendente."""
    query_id: int
    neighbor_ids: np.ndarray
    cosines: np.ndarray

    def __len__(self) -> int:
        return int(self.neighbor_ids.shape[0])

    def pairs(self) -> list[tuple[int, float]]:
        return [(int(i), float(c)) for i, c in zip(self.neighbor_ids.tolist(), self.cosines.tolist())]


# ═══════════════════════════════════════════
#  Top-k determinista
# ═══════════════════════════════════════════

def cosine_scores(queries: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Productos escalares en float64 redondeados a precisión float32, acotados a [−1, 1].

    Las filas aceptadas con desvío de norma ≤ tol pueden dar |x·y| algo mayor que 1.
    """
    raw = queries.astype(np.float64) @ vectors.astype(np.float64).T
    return np.clip(raw.astype(np.float32).astype(np.float64), -1.0, 1.0)


def top_k_row(scores: np.ndarray, ids: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k de una fila de scores: score desc, id asc."""
    n = scores.shape[0]
    kk = min(k, n)
    if kk == 0:
        return ids[:0], scores[:0]
    if n > kk:
        kth = np.partition(scores, n - kk)[n - kk]
        cand = np.nonzero(scores >= kth)[0]
    else:
        cand = np.arange(n)
    order = np.lexsort((ids[cand], -scores[cand]))[:kk]
    chosen = cand[order]
    return ids[chosen], scores[chosen]


def _check_query(index_dim: int, queries: VectorStore, k: int) -> None:
    if k < 1:
        raise ConfigError(f"k debe ser ≥ 1; recibido {k}")
    if queries.dim != index_dim:
        raise DimensionMismatchError(
            f"dimensión de consultas {queries.dim} ≠ dimensión del índice {index_dim}"
        )


def _batched(
    queries: VectorStore,
    fn: Callable[[int, int], list[Neighborhood]],
    workers: int,
) -> list[Neighborhood]:
    """Reparte las consultas en lotes; el resultado conserva el orden de entrada."""
    bounds = [(s, min(s + SEARCH_BATCH, len(queries))) for s in range(0, len(queries), SEARCH_BATCH)]
    if workers <= 1 or len(bounds) <= 1:
        parts = [fn(s, e) for s, e in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    return [nb for part in parts for nb in part]


# ═══════════════════════════════════════════
#  Índice exacto
# ═══════════════════════════════════════════

class ExactIndex:
    """Búsqueda exhaustiva; envoltorio fino sobre el VectorStore."""

    kind: IndexKind = "exact"

    def __init__(self, store: VectorStore, workers: int = 1) -> None:
        self.store = store
        self.workers = workers

    @property
    def dim(self) -> int:
        return self.store.dim

    @property
    def size(self) -> int:
        return len(self.store)

    def search(self, queries: VectorStore, k: int, nprobe: int = 1) -> list[Neighborhood]:
        _check_query(self.dim, queries, k)
        ids = self.store.ids

        def run(start: int, end: int) -> list[Neighborhood]:
            scores = cosine_scores(queries.vectors[start:end], self.store.vectors)
            out = []
            for q in range(end - start):
                nid, cos = top_k_row(scores[q], ids, k)
                out.append(Neighborhood(int(queries.ids[start + q]), nid, cos))
            return out

        return _batched(queries, run, self.workers)


# ═══════════════════════════════════════════
#  Índice IVF
# ═══════════════════════════════════════════

def _sq_distances(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return (
        np.sum(data * data, axis=1)[:, None]
        - 2.0 * data @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )


def kmeans(
    data: np.ndarray,
    nlist: int,
    seed: int,
    iterations: int = KMEANS_ITERATIONS,
) -> tuple[np.ndarray, np.ndarray]:
    """k-means euclídeo con init de puntos aleatorios sembrados.

    Un cluster vacío se re-siembra con el punto más lejano del cluster más
    grande. Devuelve (centroides nlist × dim, asignación por fila).
    """
    x = data.astype(np.float64)
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    centroids = x[np.sort(rng.choice(n, size=nlist, replace=False))].copy()

    for _ in range(iterations):
        assign = np.argmin(_sq_distances(x, centroids), axis=1)
        counts = np.bincount(assign, minlength=nlist)
        for c in np.nonzero(counts == 0)[0]:
            largest = int(np.argmax(counts))
            members = np.nonzero(assign == largest)[0]
            far = members[int(np.argmax(np.sum((x[members] - centroids[largest]) ** 2, axis=1)))]
            assign[far] = c
            counts[largest] -= 1
            counts[c] = 1
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        centroids = sums / counts[:, None]

    check_finite("centroids", centroids)
    assign = np.argmin(_sq_distances(x, centroids), axis=1)
    return centroids, assign.astype(np.int64)


class IvfIndex:
    """Listas invertidas sobre un cuantizador k-means."""

    kind: IndexKind = "ivf"

    def __init__(
        self,
        store: VectorStore,
        centroids: np.ndarray,
        assignments: np.ndarray,
        kmeans_seed: int,
        workers: int = 1,
    ) -> None:
        if assignments.shape != (len(store),):
            raise DimensionMismatchError("asignaciones IVF no coinciden con el store")
        self.store = store
        self.centroids = centroids
        self.assignments = assignments
        self.kmeans_seed = kmeans_seed
        self.workers = workers
        self.lists = [np.nonzero(assignments == c)[0] for c in range(self.nlist)]

    @classmethod
    def train(cls, store: VectorStore, nlist: int, seed: int, workers: int = 1) -> "IvfIndex":
        if not 1 <= nlist <= len(store):
            raise ConfigError(f"nlist debe estar en [1, {len(store)}]; recibido {nlist}")
        centroids, assign = kmeans(store.vectors, nlist, seed)
        sizes = np.bincount(assign, minlength=nlist)
        logger.info(
            "IVF: %d vectores en %d listas (máx %d, vacías %d)",
            len(store), nlist, int(sizes.max()), int(np.sum(sizes == 0)),
        )
        return cls(store, centroids, assign, seed, workers)

    @property
    def nlist(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return self.store.dim

    @property
    def size(self) -> int:
        return len(self.store)

    def probe(self, query: np.ndarray, nprobe: int) -> np.ndarray:
        """Índices de las nprobe listas más cercanas (empates por índice)."""
        dist = _sq_distances(query[None, :].astype(np.float64), self.centroids)[0]
        return np.lexsort((np.arange(self.nlist), dist))[:nprobe]

    def search(self, queries: VectorStore, k: int, nprobe: int = 1) -> list[Neighborhood]:
        _check_query(self.dim, queries, k)
        if not 1 <= nprobe <= self.nlist:
            raise ConfigError(f"nprobe debe estar en [1, {self.nlist}]; recibido {nprobe}")
        ids = self.store.ids

        def run(start: int, end: int) -> list[Neighborhood]:
            out = []
            for q in range(start, end):
                qv = queries.vectors[q]
                lists = self.probe(qv, nprobe)
                rows = np.sort(np.concatenate([self.lists[c] for c in lists]))
                scores = cosine_scores(qv[None, :], self.store.vectors[rows])[0]
                nid, cos = top_k_row(scores, ids[rows], k)
                out.append(Neighborhood(int(queries.ids[q]), nid, cos))
            return out

        return _batched(queries, run, self.workers)


# ═══════════════════════════════════════════
#  API de módulo
# ═══════════════════════════════════════════

def build(
    store: VectorStore,
    kind: IndexKind = "exact",
    nlist: int = 16,
    seed: int = 0,
    workers: int = 1,
) -> ExactIndex | IvfIndex:
    """Construye un índice exacto o IVF sobre el store (no vacío)."""
    if len(store) == 0:
        raise ConfigError("no se puede indexar un store vacío")
    if kind == "exact":
        return ExactIndex(store, workers)
    if kind == "ivf":
        return IvfIndex.train(store, nlist, seed, workers)
    raise ConfigError(f"tipo de índice desconocido: {kind}")


def search(index: SearchIndex, queries: VectorStore, k: int, nprobe: int = 1) -> list[Neighborhood]:
    """top-k por coseno para cada consulta, en el orden de queries."""
    return index.search(queries, k, nprobe)
