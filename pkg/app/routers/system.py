"""Router de sistema: health check y estado de las etapas del pipeline."""

from fastapi import APIRouter, Depends, HTTPException, Request

from app.core.config import MINER_CONFIG
from app.core.errors import ConfigError
from app.core.logging import get_logger
from app.core.settings import load_config
from app.models.pipeline import PipelineConfig
from app.services.pipeline import stage_status

router = APIRouter()
logger = get_logger(__name__)


def get_config() -> PipelineConfig:
    """Config del servicio: MINER_CONFIG + MINER_WORKDIR (sustituible en tests)."""
    try:
        return load_config(MINER_CONFIG or None)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=f"Configuración inválida: {e}") from e


@router.get("/health", tags=["system"])
async def health(request: Request):
    """Estado del servidor."""
    return {"status": "ok", "version": request.app.version}


@router.get("/api/stages", tags=["system"])
def stages(cfg: PipelineConfig = Depends(get_config)):
    """Estado (ok / missing / stale) de cada etapa en el directorio de trabajo."""
    return {"work_dir": cfg.work_dir, "stages": stage_status(cfg)}
