"""
Contratos (Protocol) para los componentes intercambiables del pipeline.

SearchIndex:    búsqueda top-k por coseno (exacta o IVF).
OverlapFilter:  predicado que descarta pares con solape literal.
FeatureSource:  resuelve ids a registros y vectores para el cross-encoder.
PairScorer:     scorer externo de pares (x_text, y_text) → score.

Usar Protocol (structural typing) significa que cualquier objeto con la
firma correcta satisface el contrato sin herencia ni registro explícito.
"""

from typing import TYPE_CHECKING, Protocol

import numpy as np

from app.models import Record, Side

if TYPE_CHECKING:
    from app.services.knn_index import Neighborhood, VectorStore


class SearchIndex(Protocol):
    """Índice inmutable sobre un VectorStore de vectores unitarios."""

    @property
    def dim(self) -> int: ...

    @property
    def size(self) -> int: ...

    def search(
        self,
        queries: "VectorStore",
        k: int,
        nprobe: int = 1,
    ) -> list["Neighborhood"]:
        """
        Args:
            queries: Vectores consulta (mismo dim que el índice).
            k:       Vecinos por consulta (k′ ≤ k si el índice es menor).
            nprobe:  Listas a sondear (solo IVF; ignorado en exacto).

        Returns:
            Un Neighborhood por consulta, en el orden de queries.
        """
        ...


class OverlapFilter(Protocol):
    """True si el par (x_id, y_id) debe descartarse."""

    def __call__(self, x_id: int, y_id: int) -> bool: ...


class FeatureSource(Protocol):
    """Resuelve ids de registro a Record y vector unitario."""

    def record(self, side: Side, record_id: int) -> Record: ...

    def vector(self, side: Side, record_id: int) -> np.ndarray: ...


class PairScorer(Protocol):
    """Scorer de pares por texto (p. ej. un cross-encoder transformer externo)."""

    def __call__(self, pairs: list[tuple[str, str, str]]) -> dict[str, float]:
        """
        Args:
            pairs: (pair_key, x_text, y_text) por candidato.

        Returns:
            pair_key → score. Claves ausentes se tratan como no puntuadas.
        """
        ...
