"""
Pair Miner: Backend FastAPI v1.0.0
===================================
Arquitectura:
  core/config.py    → Configuración centralizada
  core/logging.py   → Logger compartido
  core/errors.py    → Jerarquía de excepciones (códigos de salida del CLI)
  models/           → Modelos Pydantic (registros, configs, artefactos)
  services/         → Lógica de minado (corpus, encoder, knn_index, miner,
                      crossfilter, pipeline, dataset, evalharness)
  adapters/         → Ficheros binarios, JSONL y scorer externo
  routers/          → Endpoints de la API
  utils/            → Helpers compartidos (normalización, validación numérica)

El pipeline completo se ejecuta desde el CLI (python -m app.cli); la API
expone estado, ejecución de etapas sueltas y utilidades de métricas.
"""

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.core.config import MINER_LOG_LEVEL
from app.core.logging import setup_logging
from app.routers import mining, system

setup_logging(MINER_LOG_LEVEL)

app = FastAPI(
    title="Pair Miner",
    description="Minado de pares (entrada, salida) con bi-encoder + cross-encoder a partir de un seed set",
    version="1.0.0",
    docs_url="/docs",
    redoc_url="/redoc",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(system.router)
app.include_router(mining.router, prefix="/api")
