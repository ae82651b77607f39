"""
Router de minado.

POST /api/stages/{stage}   ejecuta una etapa del pipeline
GET  /api/dataset          pares minados exportados (cascada o ablación)
POST /api/rouge            precisión ROUGE-1/2/L de (candidate, source)
POST /api/margin           margin score para cosenos dados
"""

from typing import Literal

from fastapi import APIRouter, Depends, HTTPException, Query

from app.core.errors import ConfigError, MiningError, MissingArtifactError, NumericError, StaleArtifactError
from app.core.logging import get_logger
from app.models.evaluation import MarginRequest, MarginResponse, RougeRequest, RougeScores
from app.models.pipeline import MinedDataset, PipelineConfig, PipelineStage, StageArtifact
from app.routers.system import get_config
from app.services import evalharness, pipeline
from app.services.miner import margin_score

router = APIRouter(tags=["mining"])
logger = get_logger(__name__)


def _http_error(e: MiningError) -> HTTPException:
    if isinstance(e, (MissingArtifactError, StaleArtifactError)):
        return HTTPException(status_code=409, detail=str(e))
    if isinstance(e, NumericError):
        return HTTPException(status_code=500, detail=f"Fallo numérico: {e}")
    return HTTPException(status_code=400, detail=str(e))


@router.post("/stages/{stage}", response_model=StageArtifact)
def run_stage(stage: PipelineStage, cfg: PipelineConfig = Depends(get_config)):
    """Ejecuta una etapa; 409 si faltan etapas anteriores o están obsoletas."""
    try:
        return pipeline.run_stage(cfg, stage)
    except MiningError as e:
        logger.error("Etapa %s fallida: %s", stage.value, e)
        raise _http_error(e) from e


@router.get("/dataset", response_model=MinedDataset)
def get_dataset(
    limit: int | None = Query(None, ge=1),
    source: Literal["full", "biencoder"] = "full",
    cfg: PipelineConfig = Depends(get_config),
):
    """Pares minados en orden de rank."""
    try:
        ds = pipeline.load_dataset(cfg, source)
    except MissingArtifactError as e:
        raise HTTPException(status_code=404, detail=f"Dataset no exportado: {e}") from e
    except MiningError as e:
        raise _http_error(e) from e
    if limit is not None:
        ds.pairs = ds.pairs[:limit]
    return ds


@router.post("/rouge", response_model=RougeScores)
def rouge(req: RougeRequest):
    """Precisión ROUGE del candidato frente a la fuente."""
    try:
        r1, r2, rl = evalharness.rouge_scores_exact(req.candidate, req.source)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e)) from e
    return RougeScores(r1=float(r1), r2=float(r2), rl=float(rl))


@router.post("/margin", response_model=MarginResponse)
def margin(req: MarginRequest):
    """Margin score; degenerate=true si el denominador es ≈ 0 o negativo."""
    try:
        score = margin_score(req.cos_xy, req.nx_cosines, req.ny_cosines, req.k)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e)) from e
    return MarginResponse(score=score, degenerate=score is None)
