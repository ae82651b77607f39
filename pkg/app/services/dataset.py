"""
Dataset minado: construcción, export/parse JSONL, métricas frente a pares
gold y set de entrenamiento aumentado (seed + minados con <mined>).

Orden de campos de cada línea exportada:
  rank, x_id, y_id, x_text, y_text, [answer_span], cosine, margin,
  cross_score, stage, mined
"""

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Protocol

from app.adapters.workdir import atomic_write_lines, dumps_line
from app.core.config import MINED_MARKER, SEED_SIZE
from app.core.errors import ConfigError, CorpusParseError
from app.core.logging import get_logger
from app.models import PairCandidate, SeedExample, Task
from app.models.pipeline import MinedDataset, MinedPair
from app.services.corpus import CorpusHandle

logger = get_logger(__name__)

DEFAULT_KS = (1, 4, 10)
DEFAULT_NS = (20, 50, 100)
AUGMENT_MULTIPLES = (1, 2, 3, 4, 5)


class _Pair(Protocol):
    @property
    def x_id(self) -> int: ...
    @property
    def y_id(self) -> int: ...


# ── Construcción ──────────────────────────────────────────────────────────────

def build_dataset(
    candidates: Sequence[PairCandidate],
    inputs: CorpusHandle,
    outputs: CorpusHandle,
    task: Task,
    top_n: int | None = None,
    manifest: dict[str, Any] | None = None,
) -> MinedDataset:
    """Pares con texto y rank 1..n en el orden recibido (ya rankeado)."""
    chosen = list(candidates if top_n is None else candidates[:top_n])
    pairs = []
    for rank, c in enumerate(chosen, start=1):
        y = outputs.get(c.y_id)
        span = y.answer_span() if task == Task.READING_COMPREHENSION else None
        pairs.append(MinedPair(
            rank=rank,
            x_id=c.x_id,
            y_id=c.y_id,
            x_text=inputs.get(c.x_id).text,
            y_text=y.text,
            answer_span=list(span) if span else None,
            cosine=c.cosine,
            margin=c.margin,
            cross_score=c.cross_score,
            stage=c.stage,
        ))
    return MinedDataset(pairs=pairs, manifest=manifest or {})


# ── Export / parse ────────────────────────────────────────────────────────────

def pair_to_json(p: MinedPair) -> dict[str, Any]:
    row: dict[str, Any] = {
        "rank": p.rank,
        "x_id": p.x_id,
        "y_id": p.y_id,
        "x_text": p.x_text,
        "y_text": p.y_text,
    }
    if p.answer_span is not None:
        row["answer_span"] = p.answer_span
    row["cosine"] = p.cosine
    row["margin"] = p.margin
    row["cross_score"] = p.cross_score
    row["stage"] = p.stage.value
    row["mined"] = p.mined
    return row


def export(ds: MinedDataset, path: str | Path, fmt: str = "jsonl") -> Path:
    """Escribe el dataset en JSONL (una línea por par, orden de rank)."""
    if fmt != "jsonl":
        raise ConfigError(f"formato de export no soportado: {fmt}")
    if not ds.pairs:
        raise ConfigError("no se puede exportar un dataset vacío")
    p = Path(path)
    atomic_write_lines(p, (dumps_line(pair_to_json(pair)) for pair in ds.pairs))
    logger.info("Export: %d pares → %s", len(ds.pairs), p.name)
    return p


def parse(path: str | Path) -> MinedDataset:
    p = Path(path)
    pairs = []
    for line_no, line in enumerate(p.read_text("utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        try:
            pairs.append(MinedPair.model_validate(json.loads(line)))
        except ValueError as e:
            raise CorpusParseError(str(p), line_no, f"par minado inválido: {e}") from e
    return MinedDataset(pairs=pairs)


# ── Métricas ──────────────────────────────────────────────────────────────────

@dataclass
class Metrics:
    """recall@k por entrada gold y precision@N del ranking global, en racionales exactos."""
    recall: dict[int, Fraction] = field(default_factory=dict)
    precision: dict[int, Fraction] = field(default_factory=dict)

    def as_floats(self) -> dict[str, float]:
        out = {f"recall@{k}": float(v) for k, v in self.recall.items()}
        out.update({f"precision@{n}": float(v) for n, v in self.precision.items()})
        return out


def evaluate(
    pairs: Sequence[_Pair],
    gold: dict[int, int],
    ks: Iterable[int] = DEFAULT_KS,
    ns: Iterable[int] = DEFAULT_NS,
) -> Metrics:
    """Métricas de un ranking de pares.

    recall@k: fracción de entradas gold cuya y gold está entre sus k primeros
    candidatos (orden de aparición en pairs). precision@N: pares gold entre
    los N primeros del ranking global, dividido por los pares examinados.
    """
    if not gold:
        raise ConfigError("evaluate necesita al menos un par gold")
    rank_of: dict[int, int] = {}
    seen: dict[int, int] = {}
    for p in pairs:
        position = seen.get(p.x_id, 0) + 1
        seen[p.x_id] = position
        if gold.get(p.x_id) == p.y_id and p.x_id not in rank_of:
            rank_of[p.x_id] = position

    metrics = Metrics()
    for k in ks:
        hits = sum(1 for r in rank_of.values() if r <= k)
        metrics.recall[k] = Fraction(hits, len(gold))
    for n in ns:
        head = pairs[:n]
        hits = sum(1 for p in head if gold.get(p.x_id) == p.y_id)
        metrics.precision[n] = Fraction(hits, len(head)) if head else Fraction(0)
    return metrics


# ── Set aumentado ─────────────────────────────────────────────────────────────

def _seed_line(ex: SeedExample) -> dict[str, Any]:
    row: dict[str, Any] = {"x": ex.x.text, "y": ex.y.text}
    span = ex.y.answer_span()
    if span is not None:
        row["answer_span"] = list(span)
    row["mined"] = False
    return row


def _mined_line(p: MinedPair, marker: str) -> dict[str, Any]:
    row: dict[str, Any] = {"x": f"{marker} {p.x_text}", "y": p.y_text}
    if p.answer_span is not None:
        row["answer_span"] = p.answer_span
    row["mined"] = True
    return row


def build_augmented(
    seed: Sequence[SeedExample],
    ds: MinedDataset,
    multiples: Iterable[int] = AUGMENT_MULTIPLES,
    marker: str = MINED_MARKER,
) -> dict[int, list[dict[str, Any]]]:
    """Seed + los m·|seed| primeros pares minados, para cada múltiplo m.

    Las entradas minadas llevan el token marker delante. Si no hay pares
    suficientes se usan todos y se avisa.
    """
    base = len(seed) or SEED_SIZE
    seed_lines = [_seed_line(ex) for ex in seed]
    out: dict[int, list[dict[str, Any]]] = {}
    for m in multiples:
        if m < 1:
            raise ConfigError(f"múltiplo de aumento inválido: {m}")
        wanted = m * base
        if wanted > len(ds.pairs):
            logger.warning("Aumento %dx: se piden %d minados, solo hay %d", m, wanted, len(ds.pairs))
        out[m] = seed_lines + [_mined_line(p, marker) for p in ds.pairs[:wanted]]
    return out


def write_augmented(sets: dict[int, list[dict[str, Any]]], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for m, lines in sorted(sets.items()):
        path = out / f"augmented_{m}x.jsonl"
        atomic_write_lines(path, (dumps_line(line) for line in lines))
        paths.append(path)
        logger.info("Set aumentado %dx: %d ejemplos → %s", m, len(lines), path.name)
    return paths
