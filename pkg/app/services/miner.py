"""
Minado bidireccional con margin kNN (etapa 1 de la cascada).

  score(x, y) = cos(x, y) / ( Σ_{z∈N_x} cos(x, z)/2k + Σ_{z∈N_y} cos(y, z)/2k )

N_x son los k vecinos de x en C_y y N_y los k vecinos de y en C_x. Solo se
calcula N_y para las y que salen en la búsqueda directa. La búsqueda directa
pide k + top_per_input vecinos para que el filtro de solape no deje a x sin
candidatos.

Contadores (conservación: records_out + filtered + degenerate = records_in):
  records_in:        pares (x, y) evaluados
  filtered_overlap:  descartados por solape literal
  filtered_fanout:   fuera del top_per_input de su x
  filtered_cap:      fuera de max_candidates
  filtered:          suma de los tres anteriores
  degenerate_margin: denominador < 1e-9 (incluidos los negativos) o margin ≤ 0
"""

import json
import math
from collections import Counter
from collections.abc import Sequence
from pathlib import Path

from app.adapters.workdir import atomic_write_lines, dumps_line
from app.core.config import DEGENERATE_DENOMINATOR
from app.core.errors import ConfigError
from app.core.logging import get_logger
from app.models import PairCandidate, Stage
from app.models.pipeline import MarginConfig
from app.services.knn_index import VectorStore
from app.services.ports import OverlapFilter, SearchIndex

logger = get_logger(__name__)


def margin_score(
    cos_xy: float,
    nx_cosines: Sequence[float],
    ny_cosines: Sequence[float],
    k: int,
) -> float | None:
    """Ratio margin; None si el denominador es < 1e-9 (candidato degenerado).

    Un denominador negativo también es degenerado: con cos_xy < 0 daría un
    margin positivo sin que el par sea mejor que sus vecinos.

    Las listas tienen longitud k, o k′ < k si el corpus opuesto es menor;
    cada lado se promedia con su propia longitud.
    """
    if k < 1:
        raise ConfigError(f"k debe ser ≥ 1; recibido {k}")
    for name, hood in (("N_x", nx_cosines), ("N_y", ny_cosines)):
        if not 1 <= len(hood) <= k:
            raise ConfigError(f"{name} debe tener entre 1 y {k} cosenos; recibido {len(hood)}")
    denom = (
        math.fsum(nx_cosines) / (2 * len(nx_cosines))
        + math.fsum(ny_cosines) / (2 * len(ny_cosines))
    )
    if denom < DEGENERATE_DENOMINATOR:
        return None
    return cos_xy / denom


def never_overlaps(x_id: int, y_id: int) -> bool:
    return False


def _add(counters: Counter[str], key: str, n: int = 1) -> None:
    counters[key] += n
    if key.startswith("filtered_"):
        counters["filtered"] += n


def mine(
    x_store: VectorStore,
    y_store: VectorStore,
    x_index: SearchIndex,
    y_index: SearchIndex,
    cfg: MarginConfig,
    overlap_filter: OverlapFilter = never_overlaps,
    counters: Counter[str] | None = None,
) -> list[PairCandidate]:
    """Candidatos (x, y) ordenados por margin desc; empates por (x_id, y_id) asc."""
    stats: Counter[str] = counters if counters is not None else Counter()
    for key in ("records_in", "records_out", "filtered", "filtered_overlap",
                "filtered_fanout", "filtered_cap", "degenerate_margin"):
        stats.setdefault(key, 0)
    if len(x_store) == 0 or len(y_store) == 0:
        logger.warning("Store vacío (|C_x|=%d, |C_y|=%d): no hay candidatos", len(x_store), len(y_store))
        return []

    forward = y_index.search(x_store, cfg.k + cfg.top_per_input, cfg.nprobe)
    unique_ys = sorted({y for hood in forward for y, _ in hood.pairs()})
    reverse = x_index.search(y_store.take(unique_ys), cfg.k, cfg.nprobe)
    ny_by_id = {hood.query_id: hood.cosines[: cfg.k].tolist() for hood in reverse}

    result: list[PairCandidate] = []
    for hood in forward:
        x_id = hood.query_id
        pairs = hood.pairs()
        nx = [c for _, c in pairs[: cfg.k]]
        kept: list[PairCandidate] = []
        for y_id, cos in pairs:
            stats["records_in"] += 1
            if overlap_filter(x_id, y_id):
                _add(stats, "filtered_overlap")
                continue
            m = margin_score(cos, nx, ny_by_id[y_id], cfg.k)
            if m is None or m <= 0:
                stats["degenerate_margin"] += 1
                continue
            kept.append(PairCandidate(x_id=x_id, y_id=y_id, cosine=cos, margin=m, stage=Stage.BIENCODER))
        kept.sort(key=lambda c: (-c.margin, c.y_id))
        _add(stats, "filtered_fanout", max(0, len(kept) - cfg.top_per_input))
        result.extend(kept[: cfg.top_per_input])

    result.sort(key=lambda c: (-c.margin, c.x_id, c.y_id))
    if cfg.max_candidates is not None and len(result) > cfg.max_candidates:
        _add(stats, "filtered_cap", len(result) - cfg.max_candidates)
        result = result[: cfg.max_candidates]
    stats["records_out"] += len(result)

    logger.info(
        "Minado: %d x, %d evaluados → %d candidatos (solape %d, degenerados %d)",
        len(x_store), stats["records_in"], len(result),
        stats["filtered_overlap"], stats["degenerate_margin"],
    )
    return result


# ── Fichero de candidatos ─────────────────────────────────────────────────────

def candidate_to_json(c: PairCandidate) -> dict[str, object]:
    row: dict[str, object] = {"x_id": c.x_id, "y_id": c.y_id, "cosine": c.cosine, "margin": c.margin}
    if c.cross_score is not None:
        row["cross_score"] = c.cross_score
    row["stage"] = c.stage.value
    return row


def save_candidates(candidates: Sequence[PairCandidate], path: str | Path) -> Path:
    """JSONL {x_id, y_id, cosine, margin[, cross_score], stage} en el orden dado."""
    p = Path(path)
    atomic_write_lines(p, (dumps_line(candidate_to_json(c)) for c in candidates))
    return p


def load_candidates(path: str | Path) -> list[PairCandidate]:
    out = []
    for line in Path(path).read_text("utf-8").splitlines():
        if line.strip():
            out.append(PairCandidate.model_validate(json.loads(line)))
    return out
