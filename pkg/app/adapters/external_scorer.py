"""
Adaptador del cross-encoder externo: intercambio JSONL y cliente HTTP.

Permite sustituir el MLP de features por un cross-encoder real (p. ej. un
transformer que codifica "[CLS] x [SEP] y [SEP]"):

  1. export_pairs_jsonl  → {"pair_key", "x_text", "y_text"} por candidato
  2. (el scorer externo procesa el fichero)
  3. import_scores_jsonl → {"pair_key", "score"} por línea

o en línea, con HttpPairScorer contra CROSS_SCORER_URL:
  POST {"pairs": [{"pair_key", "x_text", "y_text"}, ...]}
  ← {"scores": [{"pair_key", "score"}, ...]}
"""

import json
import math
from collections.abc import Sequence
from pathlib import Path

import requests

from app.adapters.workdir import atomic_write_lines, dumps_line
from app.core.config import CROSS_SCORER_BATCH, CROSS_SCORER_TIMEOUT, CROSS_SCORER_URL
from app.core.errors import ConfigError, CorpusParseError
from app.core.logging import get_logger
from app.models import PairCandidate, Side
from app.services.ports import FeatureSource

logger = get_logger(__name__)


def pair_texts(candidates: Sequence[PairCandidate], source: FeatureSource) -> list[tuple[str, str, str]]:
    """(pair_key, x_text, y_text) de cada candidato."""
    return [
        (c.pair_key, source.record(Side.INPUT, c.x_id).text, source.record(Side.OUTPUT, c.y_id).text)
        for c in candidates
    ]


def export_pairs_jsonl(candidates: Sequence[PairCandidate], source: FeatureSource, path: str | Path) -> Path:
    p = Path(path)
    atomic_write_lines(
        p,
        (dumps_line({"pair_key": k, "x_text": x, "y_text": y}) for k, x, y in pair_texts(candidates, source)),
    )
    logger.info("Exportados %d pares para scoring externo → %s", len(candidates), p.name)
    return p


def import_scores_jsonl(path: str | Path) -> dict[str, float]:
    """Lee {"pair_key", "score"} por línea; la última aparición de una clave gana."""
    p = Path(path)
    scores: dict[str, float] = {}
    for line_no, line in enumerate(p.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            key, value = str(obj["pair_key"]), float(obj["score"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise CorpusParseError(str(p), line_no, f"línea de score inválida: {e}") from e
        if not math.isfinite(value):
            raise CorpusParseError(str(p), line_no, f"score no finito para {key}")
        scores[key] = value
    logger.info("Importados %d scores externos de %s", len(scores), p.name)
    return scores


class HttpPairScorer:
    """PairScorer que delega en un servicio HTTP, en lotes de CROSS_SCORER_BATCH.

    Un lote que falla se registra y se omite: sus pares quedan sin score.
    """

    def __init__(
        self,
        url: str = CROSS_SCORER_URL,
        timeout: int = CROSS_SCORER_TIMEOUT,
        batch_size: int = CROSS_SCORER_BATCH,
    ) -> None:
        if not url:
            raise ConfigError("CROSS_SCORER_URL no configurada")
        self.url = url
        self.timeout = timeout
        self.batch_size = batch_size

    def _post(self, batch: Sequence[tuple[str, str, str]]) -> dict[str, float]:
        payload = {"pairs": [{"pair_key": k, "x_text": x, "y_text": y} for k, x, y in batch]}
        try:
            r = requests.post(self.url, json=payload, timeout=self.timeout)
            r.raise_for_status()
            data = r.json()
            return {str(s["pair_key"]): float(s["score"]) for s in data.get("scores", [])}
        except Exception as e:
            logger.error("Error en scorer externo (%d pares): %s", len(batch), e)
            return {}

    def __call__(self, pairs: list[tuple[str, str, str]]) -> dict[str, float]:
        scores: dict[str, float] = {}
        for start in range(0, len(pairs), self.batch_size):
            scores.update(self._post(pairs[start:start + self.batch_size]))
        missing = len(pairs) - len(scores)
        if missing:
            logger.warning("Scorer externo: %d pares sin score", missing)
        return scores
