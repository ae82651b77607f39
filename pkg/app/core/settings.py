"""
Carga del PipelineConfig desde fichero plano clave=valor.

El fichero de configuración del pipeline tiene el mismo formato que un .env
y se lee con python-dotenv. Los bloques anidados usan prefijos con punto:

    task=summarization
    biencoder.learning_rate=0.01
    cross.steps=500
    margin.k=4
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

from dotenv import dotenv_values
from pydantic import ValidationError

from app.core.config import MINER_WORKDIR
from app.core.errors import ConfigError
from app.models.pipeline import PipelineConfig


def _nest(flat: Mapping[str, Any]) -> dict[str, Any]:
    """Convierte {'a.b': 1, 'c': 2} en {'a': {'b': 1}, 'c': 2}."""
    out: dict[str, Any] = {}
    for key, value in flat.items():
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            continue
        node = out
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"clave '{key}' choca con un valor escalar '{part}'")
            node = child
        node[parts[-1]] = value
    return out


def parse_override(raw: str) -> tuple[str, str]:
    """Parsea 'clave=valor' de --stage-override."""
    if "=" not in raw:
        raise ConfigError(f"override inválido '{raw}': se esperaba clave=valor")
    key, value = raw.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override inválido '{raw}': clave vacía")
    return key, value.strip()


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    *,
    work_dir: str | Path | None = None,
    seed: int | None = None,
) -> PipelineConfig:
    """Construye el PipelineConfig: fichero → overrides → flags globales.

    Raises:
        ConfigError si el fichero no existe o algún valor no valida.
    """
    flat: dict[str, Any] = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"fichero de configuración no encontrado: {p}")
        flat.update({k: v for k, v in dotenv_values(p).items() if v is not None})

    for raw in overrides or []:
        key, value = parse_override(raw)
        flat[key] = value

    if work_dir is not None:
        flat["work_dir"] = str(work_dir)
    elif "work_dir" not in flat:
        flat["work_dir"] = MINER_WORKDIR
    if seed is not None:
        flat["rng_seed"] = seed

    try:
        return PipelineConfig.model_validate(_nest(flat))
    except ValidationError as e:
        raise ConfigError(f"configuración inválida: {e}") from e


def config_hash(cfg: PipelineConfig) -> str:
    """sha256 del volcado JSON canónico del config (sin work_dir)."""
    payload = cfg.model_dump(mode="json", exclude={"work_dir"})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
