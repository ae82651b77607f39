"""
Modelos Pydantic compartidos: registros de corpus, ejemplos semilla y
candidatos minados. Son la moneda común entre servicios, CLI y API.
"""

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field

U64_MAX = 2 ** 64 - 1


# ═══════════════════════════════════════════
#  Enumeraciones
# ═══════════════════════════════════════════

class Side(str, Enum):
    """Lado del par: entradas (C_x) o salidas (C_y)."""
    INPUT = "input"
    OUTPUT = "output"


class Task(str, Enum):
    READING_COMPREHENSION = "reading_comprehension"
    SUMMARIZATION = "summarization"


class Stage(str, Enum):
    """Etapa que produjo el score final de un candidato."""
    BIENCODER = "biencoder"
    CROSSENCODER = "crossencoder"


# ═══════════════════════════════════════════
#  Registros
# ═══════════════════════════════════════════

class Record(BaseModel):
    """Un elemento de corpus: pregunta, pasaje+respuesta, documento o frase.

    meta es un mapa plano de strings. Claves reconocidas:
      date:           fecha ISO (clave de shard por defecto)
      source_doc_id:  documento del que sale una frase/span
      answer_span:    "inicio:fin" en offsets de carácter sobre text
      answer_text:    texto de la respuesta (salidas RC)
      span_type:      name | number | date (salidas RC)
    """
    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0, le=U64_MAX, description="Identificador único de 64 bits")
    text: str = Field(..., min_length=1)
    side: Side
    meta: dict[str, str] = Field(default_factory=dict)

    def answer_span(self) -> tuple[int, int] | None:
        """(inicio, fin) de meta['answer_span'], o None si no hay span."""
        raw = self.meta.get("answer_span")
        if not raw:
            return None
        begin, _, end = raw.partition(":")
        return int(begin), int(end)

    def answer_text(self) -> str:
        """Texto de la respuesta: meta['answer_text'] o el substring del span."""
        if "answer_text" in self.meta:
            return self.meta["answer_text"]
        span = self.answer_span()
        return self.text[span[0]:span[1]] if span else ""


def format_span(begin: int, end: int) -> str:
    return f"{begin}:{end}"


def span_is_valid(record: Record) -> bool:
    """0 ≤ inicio < fin ≤ len(text)."""
    try:
        span = record.answer_span()
    except ValueError:
        return False
    if span is None:
        return False
    begin, end = span
    return 0 <= begin < end <= len(record.text)


class SeedExample(BaseModel):
    """Un par etiquetado del seed set (por defecto 100 ejemplos)."""
    model_config = ConfigDict(frozen=True)

    x: Record
    y: Record
    task: Task


# ═══════════════════════════════════════════
#  Candidatos minados
# ═══════════════════════════════════════════

class PairCandidate(BaseModel):
    """Par (x, y) minado con su coseno, margin y score del cross-encoder."""
    model_config = ConfigDict(frozen=True)

    x_id: int
    y_id: int
    cosine: float = Field(..., ge=-1.0 - 1e-6, le=1.0 + 1e-6)
    margin: float
    cross_score: float | None = None
    stage: Stage = Stage.BIENCODER

    @property
    def pair_key(self) -> str:
        return f"{self.x_id}:{self.y_id}"


class SpanSpotterConfig(BaseModel):
    """Reglas del detector de spans (sustituye a un NER).

    Candidatos = fechas (Mes D, AAAA / D Mes AAAA / Mes AAAA / AAAA-MM-DD),
    números y rachas maximales de tokens capitalizados. Una racha se corta
    en puntuación final de token; las stopwords capitalizadas al inicio de
    una racha se descartan.
    """
    max_span_tokens: int = Field(6, ge=1)
    include_numbers: bool = True
    include_dates: bool = True
    stopwords: list[str] = Field(default_factory=lambda: [
        "a", "an", "the", "in", "on", "at", "of", "for", "to", "and", "or", "but",
        "by", "with", "from", "as", "is", "was", "it", "he", "she", "they", "we",
        "i", "this", "that", "these", "those", "his", "her", "its", "their",
        "when", "where", "what", "who", "why", "how", "after", "before", "if",
    ])


class ErrorResponse(BaseModel):
    """Respuesta de error estándar."""
    success: bool = False
    error: str
    detail: str = ""


