"""Modelos Pydantic del arnés de evaluación y de los endpoints de métricas."""

from pydantic import BaseModel, Field, model_validator

from app.core.config import SEED_SIZE
from app.models import U64_MAX


# ── Corpus sintético ──────────────────────────────────────────────────────────

class SyntheticSpec(BaseModel):
    """Parámetros del corpus sintético con pares plantados.

    Cada salida gold copia ⌊signal_overlap·output_len⌋ tokens dispersos de su
    entrada; cada distractor copia ⌊distractor_overlap·output_len⌋ tokens
    contiguos de una entrada que no es la suya (trampa léxica extractiva).
    """
    num_pairs: int = Field(1000, ge=1)
    vocab_size: int = Field(5000, ge=1)
    input_len: int = Field(40, ge=1)
    output_len: int = Field(20, ge=1)
    signal_overlap: float = Field(0.6, ge=0, le=1)
    distractor_count: int = Field(5000, ge=0)
    distractor_overlap: float = Field(0.2, ge=0, le=1)
    seed_size: int = Field(SEED_SIZE, ge=0)
    rng_seed: int = Field(0, ge=0, le=U64_MAX)
    separable: bool = Field(False, description="Exige distractor_overlap < signal_overlap")

    @model_validator(mode="after")
    def _check_presets(self) -> "SyntheticSpec":
        if self.separable and not self.distractor_overlap < self.signal_overlap:
            raise ValueError("preset separable exige distractor_overlap < signal_overlap")
        return self

    @classmethod
    def separable_preset(cls, **overrides: object) -> "SyntheticSpec":
        base: dict[str, object] = dict(
            num_pairs=1000, distractor_count=5000,
            signal_overlap=0.6, distractor_overlap=0.2, separable=True,
        )
        base.update(overrides)
        return cls.model_validate(base)

    @classmethod
    def lexical_trap_preset(cls, **overrides: object) -> "SyntheticSpec":
        base: dict[str, object] = dict(
            num_pairs=1000, distractor_count=5000,
            signal_overlap=0.6, distractor_overlap=0.5,
        )
        base.update(overrides)
        return cls.model_validate(base)

    @classmethod
    def toy_preset(cls, **overrides: object) -> "SyntheticSpec":
        """Corpus pequeño (200 pares) para run-all de demostración."""
        base: dict[str, object] = dict(
            num_pairs=200, vocab_size=2000, distractor_count=400,
            signal_overlap=0.6, distractor_overlap=0.2, seed_size=50, separable=True,
        )
        base.update(overrides)
        return cls.model_validate(base)


# ── ROUGE ─────────────────────────────────────────────────────────────────────

class RougeScores(BaseModel):
    """ROUGE-1/2/L de precisión de una salida frente a su fuente."""
    r1: float = Field(..., ge=0, le=1)
    r2: float = Field(..., ge=0, le=1)
    rl: float = Field(..., ge=0, le=1)


class StageRouge(BaseModel):
    """Medias, histogramas y diagnósticos de un subconjunto (biencoder / crossencoder / reference)."""
    count: int
    mean_r1: float
    mean_r2: float
    mean_rl: float
    mean_output_tokens: float = Field(0.0, description="Longitud media de la salida en tokens")
    source_marker_rate: float = Field(0.0, description="Fracción de salidas con marcas de agencia")
    histograms: dict[str, list[int]] = Field(default_factory=dict, description="Cubos de ancho 0.05")
    per_pair: list[RougeScores] = Field(default_factory=list)


class RougeReport(BaseModel):
    """Informe de abstractividad por etapa (más precisión = más extractivo)."""
    stages: dict[str, StageRouge] = Field(default_factory=dict)


# ── Endpoints ─────────────────────────────────────────────────────────────────

class RougeRequest(BaseModel):
    candidate: str = Field(..., min_length=1)
    source: str


class MarginRequest(BaseModel):
    cos_xy: float
    nx_cosines: list[float] = Field(..., min_length=1)
    ny_cosines: list[float] = Field(..., min_length=1)
    k: int = Field(..., ge=1)


class MarginResponse(BaseModel):
    score: float | None
    degenerate: bool
