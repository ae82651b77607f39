"""Modelos Pydantic del pipeline: configuración, artefactos y dataset minado."""

from enum import Enum
from typing import Any, Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import (
    CROSS_HIDDEN,
    EMBED_DIM,
    MIN_DOC_SENTENCES,
    NUM_BUCKETS,
)
from app.models import SpanSpotterConfig, Stage, Task, U64_MAX


# ═══════════════════════════════════════════
#  Configuración de entrenamiento y minado
# ═══════════════════════════════════════════

class TrainConfig(BaseModel):
    """Hiperparámetros del bi-encoder (descenso por gradiente en minibatch)."""
    learning_rate: float = Field(1e-2, gt=0)
    steps: int = Field(500, ge=0)
    batch_size: int = Field(32, ge=1)
    n_random_negs: int = Field(4, ge=0)
    multitask_weight: float = Field(1.0, ge=0, description="λ de L_nll + λ·L_prefilter")
    prefilter_negs: int = Field(4, ge=1, description="Negativos del prefiltro por positivo")
    synthetic_per_type: int = Field(2, ge=0)
    num_buckets: int = Field(NUM_BUCKETS, ge=2)
    dim: int = Field(EMBED_DIM, ge=1)
    rng_seed: int = Field(0, ge=0, le=U64_MAX)

    @field_validator("num_buckets")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v & (v - 1):
            raise ValueError(f"num_buckets debe ser potencia de dos; recibido {v}")
        return v


class CrossTrainConfig(BaseModel):
    """Hiperparámetros del cross-encoder (MLP de 2 capas sobre features de interacción)."""
    learning_rate: float = Field(0.1, gt=0)
    steps: int = Field(500, ge=0)
    batch_size: int = Field(64, ge=1)
    hidden: int = Field(CROSS_HIDDEN, ge=1)
    negatives_per_doc: int = Field(2, ge=1, description="Negativos duros por documento (pairwise)")
    rng_seed: int = Field(0, ge=0, le=U64_MAX)


class MarginConfig(BaseModel):
    """Parámetros del margin kNN."""
    k: int = Field(4, ge=1, description="Tamaño de vecindario N_x / N_y")
    top_per_input: int = Field(4, ge=1)
    max_candidates: int | None = Field(None, ge=1)
    nprobe: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _fanout_le_k(self) -> "MarginConfig":
        if self.top_per_input > self.k:
            raise ValueError(
                f"top_per_input ({self.top_per_input}) no puede superar k ({self.k})"
            )
        return self


class PipelineStage(str, Enum):
    INGEST = "ingest"
    TRAIN = "train"
    EMBED = "embed"
    INDEX = "index"
    MINE = "mine"
    TRAIN_CROSS = "train_cross"
    FILTER = "filter"
    EXPORT = "export"


STAGE_ORDER: tuple[PipelineStage, ...] = tuple(PipelineStage)


class PipelineConfig(BaseModel):
    """Configuración completa de una ejecución del pipeline."""
    task: Task = Task.SUMMARIZATION
    x_corpus: str = Field("", description="JSONL de entradas (preguntas / documentos)")
    y_corpus: str = Field(
        "",
        description=(
            "JSONL de salidas. RC: pasajes (se extraen spans si no traen answer_span). "
            "Resumen: frases ya separadas; vacío = frases de los propios documentos."
        ),
    )
    seed_path: str = Field("", description="JSONL de ejemplos semilla {x:{text,meta}, y:{text,meta}}")
    work_dir: str = ""

    biencoder: TrainConfig = Field(default_factory=TrainConfig)
    cross: CrossTrainConfig = Field(default_factory=CrossTrainConfig)
    margin: MarginConfig = Field(default_factory=MarginConfig)
    spotter: SpanSpotterConfig = Field(default_factory=SpanSpotterConfig)

    index_kind: Literal["exact", "ivf"] = "exact"
    nlist: int = Field(16, ge=1)
    shard_key: str = "date"
    shard_granularity: Literal["day", "month", "year"] = "day"
    min_doc_sentences: int = Field(MIN_DOC_SENTENCES, ge=0)
    retention: float = Field(0.2, gt=0, le=1, description="Fracción que conserva el prefiltro")
    final_top_n: int = Field(500, ge=1)
    cross_scorer: Literal["mlp", "http", "file"] = Field(
        "mlp", description="mlp = cross-encoder entrenado; http = CROSS_SCORER_URL; file = cross_scores_path"
    )
    cross_scores_path: str = Field("", description="JSONL {pair_key, score} para cross_scorer=file")
    workers: int = Field(1, ge=1)
    rng_seed: int = Field(0, ge=0, le=U64_MAX)


# ═══════════════════════════════════════════
#  Artefactos y dataset
# ═══════════════════════════════════════════

class StageArtifact(BaseModel):
    """Resumen persistido de una etapa (artifact.json en su carpeta)."""
    stage: PipelineStage
    config_hash: str
    input_hashes: dict[str, str] = Field(default_factory=dict)
    outputs: dict[str, str] = Field(default_factory=dict, description="nombre → ruta relativa")
    output_hashes: dict[str, str] = Field(default_factory=dict)
    counters: dict[str, int] = Field(default_factory=dict)
    info: dict[str, Any] = Field(default_factory=dict)


class MinedPair(BaseModel):
    """Una línea del export: par minado con scores y procedencia."""
    rank: int = Field(..., ge=1)
    x_id: int
    y_id: int
    x_text: str
    y_text: str
    answer_span: list[int] | None = None
    cosine: float
    margin: float
    cross_score: float | None = None
    stage: Stage = Stage.CROSSENCODER
    mined: bool = True


class MinedDataset(BaseModel):
    """Lista ordenada (ranking del cross-encoder) de pares minados + manifest."""
    pairs: list[MinedPair] = Field(default_factory=list)
    manifest: dict[str, Any] = Field(default_factory=dict)
