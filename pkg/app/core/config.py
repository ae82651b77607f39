"""
Configuración centralizada del proyecto.
Todas las constantes y parámetros por defecto se definen aquí.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# ── Rutas del proyecto ────────────────────────────────────────
BASE_DIR = Path(__file__).resolve().parent.parent          # app/
PROJECT_DIR = BASE_DIR.parent

# ── Entorno ───────────────────────────────────────────────────
MINER_WORKDIR: str = os.getenv("MINER_WORKDIR", str(PROJECT_DIR / "work"))
MINER_CONFIG: str = os.getenv("MINER_CONFIG", "")
MINER_LOG_LEVEL: str = os.getenv("MINER_LOG_LEVEL", "INFO")

# ── Scorer externo (cross-encoder real detrás de HTTP) ────────
CROSS_SCORER_URL: str = os.getenv("CROSS_SCORER_URL", "")
CROSS_SCORER_TIMEOUT = int(os.getenv("CROSS_SCORER_TIMEOUT", "60"))
CROSS_SCORER_BATCH = 256

# ── Featurización y bi-encoder ────────────────────────────────
NUM_BUCKETS = 2 ** 18
EMBED_DIM = 256
HASH_KEY = b"pairmine-v1"       # clave fija de blake2b: hashes estables entre plataformas
DEGENERATE_NORM = 1e-12

# ── Corpus ────────────────────────────────────────────────────
UNKEYED_SHARD = "_unkeyed"
MIN_DOC_SENTENCES = 4           # documentos de resumen con menos frases se descartan
SEED_SIZE = 100
NEGATIVES_PER_TYPE = 2          # negativos sintéticos (a) y (b) por ejemplo semilla

# ── Índices ───────────────────────────────────────────────────
KMEANS_ITERATIONS = 20
UNIT_NORM_TOL = 1e-4            # tolerancia al cargar vectores
SEARCH_BATCH = 1024             # consultas por lote en búsqueda exacta

# ── Miner ─────────────────────────────────────────────────────
DEGENERATE_DENOMINATOR = 1e-9

# ── Cross-encoder ─────────────────────────────────────────────
CROSS_HIDDEN = 16
CROSS_NEGS_TOP = 4              # negativos del decil superior por positivo
CROSS_NEGS_UNIFORM = 4          # negativos uniformes por positivo

# ── Export ────────────────────────────────────────────────────
MINED_MARKER = "<mined>"        # token que marca ejemplos minados en el set aumentado
HISTOGRAM_WIDTH = 0.05
