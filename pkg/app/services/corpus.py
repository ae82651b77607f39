"""
Servicio de corpus: ingesta JSONL, shards por fecha y descomposición en salidas.

Flujo:
  1. ingest_jsonl:    una línea JSON → un Record (texto NFC + espacios colapsados).
  2. shard_by_key:    partición por meta[key] (fechas truncadas a día/mes/año).
  3. split_outputs:   resumen: una salida por frase; RC: una salida por span.
  4. verbatim_overlap: filtro de solape literal sobre texto normalizado.

El detector de spans es determinista y basado en reglas (sustituye a un NER):
  - fechas:  "October 25, 1956", "25 October 1956", "October 1956", "1956-10-25"
  - números: 1990, 3.5, 1,000, 45%
  - nombres: rachas maximales de tokens capitalizados; la racha se corta en
             puntuación final del token y pierde las stopwords iniciales.
"""

import json
import re
from collections import Counter
from pathlib import Path
from typing import Any, NamedTuple

from pydantic import BaseModel, ConfigDict, PrivateAttr, field_validator, model_validator

from app.adapters.workdir import atomic_write_lines, dumps_line
from app.core.config import MIN_DOC_SENTENCES, UNKEYED_SHARD
from app.core.errors import ConfigError, CorpusParseError
from app.core.logging import get_logger
from app.models import (
    U64_MAX,
    Record,
    SeedExample,
    Side,
    SpanSpotterConfig,
    Task,
    format_span,
    span_is_valid,
)
from app.services.ports import OverlapFilter
from app.utils.normalization import normalize_record_text, normalize_text

logger = get_logger(__name__)

# Los ids hijos reservan 20 bits bajos: j < 2^19 para frases/spans,
# 0x80000 + j para negativos sintéticos. Los ids de documentos y pasajes del
# corpus de salidas quedan limitados a < 2^44.
CHILD_BITS = 20
SYNTHETIC_BASE = 0x80000
_MAX_PARENT_ID = U64_MAX >> CHILD_BITS

SPAN_NAME = "name"
SPAN_NUMBER = "number"
SPAN_DATE = "date"

_INHERITED_SKIP = {"answer_span", "answer_text", "span_type", "source_doc_id", "sentence_index"}


# ═══════════════════════════════════════════
#  Tipos
# ═══════════════════════════════════════════

class CorpusHandle(BaseModel):
    """Colección inmutable de Records del mismo lado, ordenada por id."""
    model_config = ConfigDict(frozen=True)

    records: tuple[Record, ...] = ()
    side: Side
    shard_key: str | None = None
    skipped: int = 0

    _by_id: dict[int, Record] = PrivateAttr(default_factory=dict)

    @field_validator("records")
    @classmethod
    def _sorted_unique(cls, v: tuple[Record, ...]) -> tuple[Record, ...]:
        ordered = tuple(sorted(v, key=lambda r: r.id))
        for prev, cur in zip(ordered, ordered[1:]):
            if prev.id == cur.id:
                raise ValueError(f"id duplicado en el corpus: {cur.id}")
        return ordered

    @model_validator(mode="after")
    def _same_side(self) -> "CorpusHandle":
        for r in self.records:
            if r.side != self.side:
                raise ValueError(f"registro {r.id} es {r.side.value}, el corpus es {self.side.value}")
        return self

    def model_post_init(self, __context: Any) -> None:
        self._by_id = {r.id: r for r in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def get(self, record_id: int) -> Record:
        """Record por id; KeyError si no existe."""
        return self._by_id[record_id]

    def __contains__(self, record_id: object) -> bool:
        return record_id in self._by_id

    def ids(self) -> list[int]:
        return [r.id for r in self.records]

    def subset(self, ids: set[int] | list[int]) -> "CorpusHandle":
        """Sub-corpus con los ids dados (ignora los inexistentes)."""
        wanted = set(ids)
        return CorpusHandle(
            records=tuple(r for r in self.records if r.id in wanted),
            side=self.side,
            shard_key=self.shard_key,
        )


class Shard(BaseModel):
    """Partición del corpus por valor de clave (p. ej. un día)."""
    model_config = ConfigDict(frozen=True)

    key_value: str
    record_ids: list[int]


class Span(NamedTuple):
    begin: int
    end: int
    kind: str


def make_corpus(records: list[Record], side: Side, shard_key: str | None = None) -> CorpusHandle:
    return CorpusHandle(records=tuple(records), side=side, shard_key=shard_key)


# ═══════════════════════════════════════════
#  Ingesta / export JSONL
# ═══════════════════════════════════════════

def _parse_meta(raw: Any, path: str, line_no: int) -> dict[str, str]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise CorpusParseError(path, line_no, "'meta' debe ser un objeto")
    meta: dict[str, str] = {}
    for key, value in raw.items():
        if isinstance(value, (dict, list)) or value is None:
            raise CorpusParseError(path, line_no, f"meta['{key}'] debe ser un valor plano")
        meta[str(key)] = value if isinstance(value, str) else json.dumps(value)
    return meta


def _parse_id(raw: Any, path: str, line_no: int) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int) or not 0 <= raw <= U64_MAX:
        raise CorpusParseError(path, line_no, f"'id' debe ser un entero sin signo de 64 bits: {raw!r}")
    return raw


def ingest_jsonl(path: str | Path, side: Side, id_offset: int = 0) -> CorpusHandle:
    """Lee un corpus JSONL.

    Cada línea: {"text": str, "meta"?: {str: str}, "id"?: int}. Los ids se
    asignan secuencialmente desde id_offset sobre los registros conservados
    salvo que la línea traiga "id". Las líneas en blanco se ignoran; las
    líneas cuyo texto queda vacío tras normalizar se omiten y se cuentan.

    Raises:
        OSError:          fichero ilegible.
        CorpusParseError: JSON malformado, campos inválidos o id duplicado.
    """
    p = Path(path)
    data = p.read_bytes()
    records: list[Record] = []
    seen: set[int] = set()
    skipped = 0

    for line_no, raw_line in enumerate(data.split(b"\n"), start=1):
        try:
            line = raw_line.decode("utf-8").strip()
        except UnicodeDecodeError as e:
            raise CorpusParseError(str(p), line_no, f"UTF-8 inválido: {e}") from e
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusParseError(str(p), line_no, f"JSON malformado: {e.msg}") from e
        if not isinstance(obj, dict):
            raise CorpusParseError(str(p), line_no, "se esperaba un objeto JSON")
        text = obj.get("text")
        if not isinstance(text, str):
            raise CorpusParseError(str(p), line_no, "falta el campo 'text' (string)")

        text = normalize_record_text(text)
        if not text:
            skipped += 1
            continue

        meta = _parse_meta(obj.get("meta"), str(p), line_no)
        if "id" in obj:
            record_id = _parse_id(obj["id"], str(p), line_no)
        else:
            record_id = id_offset + len(records)
            if record_id > U64_MAX:
                raise CorpusParseError(str(p), line_no, "id asignado fuera de rango")
        if record_id in seen:
            raise CorpusParseError(str(p), line_no, f"id duplicado: {record_id}")
        seen.add(record_id)
        records.append(Record(id=record_id, text=text, side=side, meta=meta))

    if skipped:
        logger.warning("%s: %d líneas con texto vacío omitidas", p.name, skipped)
    logger.info("Ingesta %s: %d registros (%s)", p.name, len(records), side.value)
    return CorpusHandle(records=tuple(records), side=side, skipped=skipped)


def record_to_json(record: Record) -> dict[str, Any]:
    return {"id": record.id, "text": record.text, "meta": dict(record.meta)}


def export_jsonl(corpus: CorpusHandle, path: str | Path) -> Path:
    """Escribe el corpus como JSONL {id, text, meta} en orden de id."""
    p = Path(path)
    atomic_write_lines(p, (dumps_line(record_to_json(r)) for r in corpus.records))
    return p


def load_seed_jsonl(path: str | Path, task: Task) -> list[SeedExample]:
    """Lee el seed set: una línea {"x": {...}, "y": {...}} por ejemplo.

    Para RC, y debe traer meta.answer_span válido o un campo "answer" cuyo
    primer acierto literal en y.text define el span.
    """
    p = Path(path)
    examples: list[SeedExample] = []
    for line_no, raw_line in enumerate(p.read_text("utf-8").split("\n"), start=1):
        line = raw_line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusParseError(str(p), line_no, f"JSON malformado: {e.msg}") from e
        if not isinstance(obj, dict) or not isinstance(obj.get("x"), dict) or not isinstance(obj.get("y"), dict):
            raise CorpusParseError(str(p), line_no, "se esperaba {\"x\": {...}, \"y\": {...}}")

        sides: dict[str, Record] = {}
        for key, side in (("x", Side.INPUT), ("y", Side.OUTPUT)):
            part = obj[key]
            text = part.get("text")
            if not isinstance(text, str) or not normalize_record_text(text):
                raise CorpusParseError(str(p), line_no, f"'{key}.text' vacío o ausente")
            meta = _parse_meta(part.get("meta"), str(p), line_no)
            sides[key] = Record(id=len(examples), text=normalize_record_text(text), side=side, meta=meta)

        y = sides["y"]
        if task == Task.READING_COMPREHENSION:
            answer = obj["y"].get("answer")
            if "answer_span" not in y.meta and isinstance(answer, str):
                begin = y.text.find(normalize_record_text(answer))
                if begin < 0:
                    raise CorpusParseError(str(p), line_no, "la respuesta no aparece en el pasaje")
                meta = dict(y.meta)
                meta["answer_span"] = format_span(begin, begin + len(normalize_record_text(answer)))
                y = y.model_copy(update={"meta": meta})
            if not span_is_valid(y):
                raise CorpusParseError(str(p), line_no, "answer_span inválido en el ejemplo RC")
        examples.append(SeedExample(x=sides["x"], y=y, task=task))

    logger.info("Seed set %s: %d ejemplos", p.name, len(examples))
    return examples


def export_seed_jsonl(seed: list[SeedExample], path: str | Path) -> Path:
    p = Path(path)
    lines = (
        dumps_line({
            "x": {"text": ex.x.text, "meta": dict(ex.x.meta)},
            "y": {"text": ex.y.text, "meta": dict(ex.y.meta)},
        })
        for ex in seed
    )
    atomic_write_lines(p, lines)
    return p


# ═══════════════════════════════════════════
#  Shards
# ═══════════════════════════════════════════

_GRANULARITY_CHARS = {"day": 10, "month": 7, "year": 4}
_ISO_DATE = re.compile(r"^\d{4}(-\d{2}(-\d{2})?)?")


def shard_value(raw: str, granularity: str | None) -> str:
    """Valor de shard: fechas ISO truncadas a la granularidad; resto tal cual."""
    if granularity is None:
        return raw
    if granularity not in _GRANULARITY_CHARS:
        raise ConfigError(f"granularidad desconocida: {granularity}")
    if _ISO_DATE.match(raw):
        return raw[:_GRANULARITY_CHARS[granularity]]
    return raw


def shard_by_key(corpus: CorpusHandle, key: str, granularity: str | None = None) -> list[Shard]:
    """Partición de ids por meta[key]; sin clave → shard "_unkeyed".

    Los shards salen ordenados por key_value ascendente y cada lista de ids
    en orden ascendente.
    """
    buckets: dict[str, list[int]] = {}
    for r in corpus.records:
        raw = r.meta.get(key)
        value = shard_value(raw, granularity) if raw else UNKEYED_SHARD
        buckets.setdefault(value, []).append(r.id)
    return [Shard(key_value=k, record_ids=buckets[k]) for k in sorted(buckets)]


# ═══════════════════════════════════════════
#  Frases
# ═══════════════════════════════════════════

ABBREVIATIONS = frozenset({
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "inc", "ltd",
    "co", "corp", "no", "fig", "gen", "gov", "sen", "rep", "rev", "mt", "ave",
    "e.g", "i.e", "u.s", "u.k", "u.n", "a.m", "p.m", "approx", "dept", "est",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
})

_TERMINAL = re.compile(r"[.!?]+[\"')\]]*(?=\s)")
_CONTINUATION = re.compile(r"\s+[\"'(\[]*(\S)")
_LAST_WORD = re.compile(r"(\S+)$")
_HAS_WORD = re.compile(r"\w")


def _is_abbreviation(segment_before: str) -> bool:
    m = _LAST_WORD.search(segment_before)
    if not m:
        return False
    word = m.group(1).lstrip("\"'([")
    if len(word) == 1 and word.isupper():
        return True     # inicial: "J. Smith"
    return word.casefold() in ABBREVIATIONS


def _trimmed(text: str, begin: int, end: int) -> tuple[int, int] | None:
    while begin < end and text[begin].isspace():
        begin += 1
    while end > begin and text[end - 1].isspace():
        end -= 1
    if begin == end or not _HAS_WORD.search(text, begin, end):
        return None
    return begin, end


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Offsets (inicio, fin) de las frases de text.

    Hay corte tras [.!?] (con comillas/paréntesis de cierre) seguido de
    espacio y de una continuación en mayúscula, salvo que el punto cierre
    una abreviatura conocida o una inicial.
    """
    spans: list[tuple[int, int]] = []
    start = 0
    for m in _TERMINAL.finditer(text):
        nxt = _CONTINUATION.match(text, m.end())
        if not nxt or not nxt.group(1).isupper():
            continue
        if m.group().startswith(".") and _is_abbreviation(text[start:m.start()]):
            continue
        span = _trimmed(text, start, m.end())
        if span:
            spans.append(span)
        start = m.end()
    span = _trimmed(text, start, len(text))
    if span:
        spans.append(span)
    return spans


# ═══════════════════════════════════════════
#  Detector de spans
# ═══════════════════════════════════════════

_MONTH = (
    r"(?:January|February|March|April|May|June|July|August|September|October|November|December"
    r"|Jan\.?|Feb\.?|Mar\.?|Apr\.?|Jun\.?|Jul\.?|Aug\.?|Sept?\.?|Oct\.?|Nov\.?|Dec\.?)"
)
_DATE = re.compile(
    rf"\b{_MONTH}\s+\d{{1,2}},?\s+\d{{4}}\b"
    rf"|\b\d{{1,2}}\s+{_MONTH}\s+\d{{4}}\b"
    rf"|\b{_MONTH}\s+\d{{4}}\b"
    r"|\b\d{4}-\d{2}-\d{2}\b"
)
_RAW_TOKEN = re.compile(r"\S+")
_NUMBER = re.compile(r"\d+(?:[.,]\d+)*%?")
_LEADING = "\"'([{"
_TRAILING = ".,;:!?\"')]}"


class _Token(NamedTuple):
    begin: int
    end: int
    core: str
    breaks: bool    # el token lleva puntuación final: cierra la racha


def _tokens(text: str) -> list[_Token]:
    out: list[_Token] = []
    for m in _RAW_TOKEN.finditer(text):
        raw = m.group()
        lead = len(raw) - len(raw.lstrip(_LEADING))
        core = raw[lead:].rstrip(_TRAILING)
        begin = m.start() + lead
        out.append(_Token(begin, begin + len(core), core, len(core) + lead < len(raw)))
    return out


def spot_spans(text: str, cfg: SpanSpotterConfig | None = None) -> list[Span]:
    """Spans candidatos a respuesta (fechas, números, nombres), ordenados por offset."""
    cfg = cfg or SpanSpotterConfig()
    stop = {w.casefold() for w in cfg.stopwords}
    found: set[Span] = set()

    dates: list[tuple[int, int]] = []
    if cfg.include_dates:
        for m in _DATE.finditer(text):
            dates.append((m.start(), m.end()))
            found.add(Span(m.start(), m.end(), SPAN_DATE))

    run: list[_Token] = []

    def flush() -> None:
        while run and run[0].core.casefold() in stop:
            run.pop(0)
        if run:
            found.add(Span(run[0].begin, run[-1].end, SPAN_NAME))
        run.clear()

    for tok in _tokens(text):
        if not tok.core or any(b < tok.end and tok.begin < e for b, e in dates):
            flush()
            continue
        if _NUMBER.fullmatch(tok.core):
            flush()
            if cfg.include_numbers:
                found.add(Span(tok.begin, tok.end, SPAN_NUMBER))
            continue
        if tok.core[0].isupper():
            run.append(tok)
            if tok.breaks or len(run) >= cfg.max_span_tokens:
                flush()
            continue
        flush()
    flush()

    return sorted(found)


def span_type_of(record: Record) -> str:
    """Tipo del span de respuesta de una salida RC ('' si no aplica)."""
    return record.meta.get("span_type", "")


# ═══════════════════════════════════════════
#  Descomposición en salidas
# ═══════════════════════════════════════════

def child_id(parent_id: int, j: int, synthetic: bool = False) -> int:
    """Id de la salida j derivada de parent_id: (parent << 20) | j.

    Raises:
        ConfigError: parent_id ≥ 2^44 (el id derivado no cabe en u64) o j fuera de rango.
    """
    if parent_id > _MAX_PARENT_ID:
        raise ConfigError(
            f"id {parent_id} demasiado grande para derivar salidas: "
            f"los documentos y pasajes de salida necesitan id < 2^44"
        )
    if j >= SYNTHETIC_BASE:
        raise ConfigError(f"demasiadas salidas derivadas de {parent_id}")
    return (parent_id << CHILD_BITS) | ((SYNTHETIC_BASE + j) if synthetic else j)


def _inherited_meta(record: Record) -> dict[str, str]:
    return {k: v for k, v in record.meta.items() if k not in _INHERITED_SKIP}


def split_outputs(record: Record, task: Task, spotter: SpanSpotterConfig | None = None) -> list[Record]:
    """Descompone un documento (resumen) o pasaje (RC) en salidas candidatas.

    Resumen: una salida por frase con meta.source_doc_id.
    RC: una salida por span detectado; text = pasaje completo, meta.answer_span
    y meta.answer_text apuntan al span.
    """
    base = _inherited_meta(record)
    base["source_doc_id"] = str(record.id)
    out: list[Record] = []

    if task == Task.SUMMARIZATION:
        for j, (b, e) in enumerate(split_sentences(record.text)):
            meta = dict(base, sentence_index=str(j))
            out.append(Record(id=child_id(record.id, j), text=record.text[b:e], side=Side.OUTPUT, meta=meta))
        return out

    for j, span in enumerate(spot_spans(record.text, spotter)):
        meta = dict(
            base,
            answer_span=format_span(span.begin, span.end),
            answer_text=record.text[span.begin:span.end],
            span_type=span.kind,
        )
        out.append(Record(id=child_id(record.id, j), text=record.text, side=Side.OUTPUT, meta=meta))
    return out


def split_corpus(corpus: CorpusHandle, task: Task, spotter: SpanSpotterConfig | None = None) -> CorpusHandle:
    """split_outputs sobre todo el corpus → corpus de salidas."""
    outputs: list[Record] = []
    for r in corpus.records:
        outputs.extend(split_outputs(r, task, spotter))
    return CorpusHandle(records=tuple(outputs), side=Side.OUTPUT, shard_key=corpus.shard_key)


def filter_min_sentences(
    corpus: CorpusHandle,
    min_sentences: int = MIN_DOC_SENTENCES,
) -> tuple[CorpusHandle, int]:
    """Descarta documentos con menos de min_sentences frases.

    Returns:
        (corpus filtrado, número de documentos descartados)
    """
    kept = [r for r in corpus.records if len(split_sentences(r.text)) >= min_sentences]
    dropped = len(corpus) - len(kept)
    if dropped:
        logger.info("Descartados %d documentos con < %d frases", dropped, min_sentences)
    return (
        CorpusHandle(records=tuple(kept), side=corpus.side, shard_key=corpus.shard_key, skipped=corpus.skipped),
        dropped,
    )


def encoding_text(record: Record, task: Task) -> str:
    """Texto que ve el bi-encoder: en RC las salidas son "respuesta pasaje"."""
    if task == Task.READING_COMPREHENSION and record.side == Side.OUTPUT:
        answer = record.answer_text()
        if answer:
            return f"{answer} {record.text}"
    return record.text


# ═══════════════════════════════════════════
#  Filtro de solape literal
# ═══════════════════════════════════════════

def verbatim_overlap(needle: str, haystack: str) -> bool:
    """True si needle normalizado es substring contiguo de haystack normalizado.

    Monótono al extender haystack con un sufijo, salvo si el sufijo empieza por
    una marca combinante que NFC compone con el último carácter.
    """
    return normalize_text(needle) in normalize_text(haystack)


def overlap_filter_for(task: Task, inputs: CorpusHandle, outputs: CorpusHandle,
                       counters: Counter[str] | None = None) -> OverlapFilter:
    """Predicado (x_id, y_id) → descartar.

    RC: la respuesta aparece literal en la pregunta.
    Resumen: la frase aparece literal en el documento.
    """
    def _drop(x_id: int, y_id: int) -> bool:
        x, y = inputs.get(x_id), outputs.get(y_id)
        needle = y.answer_text() if task == Task.READING_COMPREHENSION else y.text
        hit = bool(needle) and verbatim_overlap(needle, x.text)
        if hit and counters is not None:
            counters["verbatim_hits"] += 1
        return hit

    return _drop
