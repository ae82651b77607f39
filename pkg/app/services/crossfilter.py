"""
Cross-encoder de escala reducida: MLP de 2 capas sobre features de interacción.

Features (orden fijo, FEATURE_NAMES):
  cosine, uni_precision, uni_recall, bi_precision, bi_recall,
  log_len_x, log_len_y, length_ratio, novel_fraction, span_type

Modelo:  s = w2 · tanh(W1 · u + b1) + b2,  u = (f − mean) / scale
Modos:
  binary:   pérdida logística; positivos = semillas, negativos = candidatos
             del bi-encoder (4 del decil superior de margin + 4 uniformes).
  pairwise: log(1 + exp(s⁻ − s⁺)) sobre triples (x, y⁺, y⁻) con negativos
             duros recuperados por el bi-encoder. Scores sin normalizar.
"""

from collections import Counter
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from app.core.config import CROSS_HIDDEN, CROSS_NEGS_TOP, CROSS_NEGS_UNIFORM
from app.core.errors import ConfigError, DimensionMismatchError, NumericError, UnknownRecordError
from app.core.logging import get_logger
from app.models import PairCandidate, Record, SeedExample, Side, Stage, Task
from app.models.pipeline import CrossTrainConfig
from app.services.corpus import SPAN_DATE, SPAN_NAME, SPAN_NUMBER, CorpusHandle, encoding_text
from app.services.encoder import BiencoderModel, embed, featurize, sigmoid
from app.services.knn_index import VectorStore
from app.services.ports import FeatureSource, SearchIndex
from app.utils.normalization import normalize_text, tokenize

logger = get_logger(__name__)

FEATURE_NAMES = (
    "cosine",
    "uni_precision",
    "uni_recall",
    "bi_precision",
    "bi_recall",
    "log_len_x",
    "log_len_y",
    "length_ratio",
    "novel_fraction",
    "span_type",
)
NUM_FEATURES = len(FEATURE_NAMES)

_SPAN_CODE = {SPAN_NAME: 1.0 / 3.0, SPAN_NUMBER: 2.0 / 3.0, SPAN_DATE: 1.0}
_MIN_SCALE = 1e-12


class CrossMode(str, Enum):
    BINARY = "binary"
    PAIRWISE = "pairwise"


# ═══════════════════════════════════════════
#  Features de interacción
# ═══════════════════════════════════════════

def _overlap(cand: Counter[tuple[str, ...]], ref: Counter[tuple[str, ...]]) -> int:
    return sum((cand & ref).values())


def _ngrams(toks: list[str], n: int) -> Counter[tuple[str, ...]]:
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def interaction_features(
    x: Record,
    y: Record,
    x_vec: np.ndarray,
    y_vec: np.ndarray,
    task: Task | None = None,
) -> np.ndarray:
    """Vector de NUM_FEATURES features para el par (x, y).

    Con task=RC el lado y se tokeniza como "respuesta pasaje" y se activa el
    indicador de tipo de span.
    """
    x_toks = tokenize(x.text)
    y_text = encoding_text(y, task) if task is not None else y.text
    y_toks = tokenize(y_text)

    feats = np.zeros(NUM_FEATURES)
    feats[0] = float(np.clip(np.dot(x_vec, y_vec), -1.0, 1.0))
    for n, col in ((1, 1), (2, 3)):
        xg, yg = _ngrams(x_toks, n), _ngrams(y_toks, n)
        hit = _overlap(yg, xg)
        feats[col] = _ratio(hit, sum(yg.values()))
        feats[col + 1] = _ratio(hit, sum(xg.values()))
    feats[5] = np.log1p(len(x_toks))
    feats[6] = np.log1p(len(y_toks))
    feats[7] = _ratio(len(y_toks), len(x_toks))
    x_set = set(x_toks)
    feats[8] = _ratio(sum(1 for t in y_toks if t not in x_set), len(y_toks))
    if task == Task.READING_COMPREHENSION:
        feats[9] = _SPAN_CODE.get(y.meta.get("span_type", ""), 0.0)
    return feats


# ═══════════════════════════════════════════
#  Modelo
# ═══════════════════════════════════════════

@dataclass
class CrossModel:
    """MLP F → h (tanh) → 1 con estandarización de entrada."""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    mean: np.ndarray
    scale: np.ndarray
    mode: CrossMode = CrossMode.BINARY
    rng_seed: int = 0
    loss_trace: list[float] = field(default_factory=list)

    @classmethod
    def initialize(
        cls,
        num_features: int = NUM_FEATURES,
        hidden: int = CROSS_HIDDEN,
        rng_seed: int = 0,
        mode: CrossMode = CrossMode.BINARY,
    ) -> "CrossModel":
        """W1 ~ N(0, 1/F), w2 ~ N(0, 1/h), sesgos a 0, estandarización identidad."""
        rng = np.random.default_rng(rng_seed)
        return cls(
            w1=rng.standard_normal((hidden, num_features)) / np.sqrt(num_features),
            b1=np.zeros(hidden),
            w2=rng.standard_normal(hidden) / np.sqrt(hidden),
            b2=0.0,
            mean=np.zeros(num_features),
            scale=np.ones(num_features),
            mode=mode,
            rng_seed=rng_seed,
        )

    @classmethod
    def zeros(cls, num_features: int = NUM_FEATURES, hidden: int = CROSS_HIDDEN) -> "CrossModel":
        return cls(
            w1=np.zeros((hidden, num_features)),
            b1=np.zeros(hidden),
            w2=np.zeros(hidden),
            b2=0.0,
            mean=np.zeros(num_features),
            scale=np.ones(num_features),
        )

    @property
    def num_features(self) -> int:
        return int(self.w1.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[0])

    def fit_standardization(self, features: np.ndarray) -> None:
        self.mean = features.mean(axis=0)
        std = features.std(axis=0)
        self.scale = np.where(std < _MIN_SCALE, 1.0, std)


@dataclass
class CrossGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float


@dataclass
class _MlpForward:
    u: np.ndarray
    hidden: np.ndarray
    scores: np.ndarray


def _check_width(model: CrossModel, features: np.ndarray) -> None:
    if features.shape[-1] != model.num_features:
        raise DimensionMismatchError(
            f"{features.shape[-1]} features para un modelo de ancho {model.num_features}"
        )


def _mlp_forward(model: CrossModel, features: np.ndarray) -> _MlpForward:
    _check_width(model, features)
    u = (features - model.mean) / model.scale
    hidden = np.tanh(u @ model.w1.T + model.b1)
    return _MlpForward(u, hidden, hidden @ model.w2 + model.b2)


def _mlp_backward(model: CrossModel, fw: _MlpForward, d_scores: np.ndarray) -> tuple[CrossGrads, np.ndarray]:
    """Gradientes de parámetros y de la entrada (sin estandarizar)."""
    d_hidden = d_scores[:, None] * model.w2[None, :]
    d_pre = d_hidden * (1.0 - fw.hidden ** 2)
    grads = CrossGrads(
        w1=d_pre.T @ fw.u,
        b1=d_pre.sum(axis=0),
        w2=fw.hidden.T @ d_scores,
        b2=float(d_scores.sum()),
    )
    d_input = (d_pre @ model.w1) / model.scale
    return grads, d_input


def score(model: CrossModel, feats: np.ndarray) -> float:
    """Score crudo (sin normalizar) de un vector de features."""
    return float(_mlp_forward(model, np.asarray(feats, dtype=np.float64)[None, :]).scores[0])


def score_batch(model: CrossModel, features: np.ndarray) -> np.ndarray:
    if features.shape[0] == 0:
        return np.zeros(0)
    return _mlp_forward(model, features).scores


def score_input_grad(model: CrossModel, feats: np.ndarray) -> np.ndarray:
    """∂score/∂features (analítico)."""
    fw = _mlp_forward(model, np.asarray(feats, dtype=np.float64)[None, :])
    _, d_input = _mlp_backward(model, fw, np.ones(1))
    return d_input[0]


# ── Pérdidas ──────────────────────────────────────────────────────────────────

def pairwise_loss(delta: np.ndarray | float) -> np.ndarray:
    """ℓ(δ) = log(1 + exp(δ)) con δ = s⁻ − s⁺."""
    return np.logaddexp(0.0, np.asarray(delta, dtype=np.float64))


def binary_loss_and_grad(model: CrossModel, features: np.ndarray, labels: np.ndarray) -> tuple[float, CrossGrads]:
    """Pérdida logística media y gradientes."""
    fw = _mlp_forward(model, features)
    s = fw.scores
    loss = float(np.mean(np.logaddexp(0.0, s) - labels * s))
    grads, _ = _mlp_backward(model, fw, (sigmoid(s) - labels) / s.shape[0])
    return loss, grads


def pairwise_loss_and_grad(
    model: CrossModel,
    pos_features: np.ndarray,
    neg_features: np.ndarray,
) -> tuple[float, CrossGrads]:
    """Media de log(1 + exp(s⁻ − s⁺)) y gradientes."""
    n = pos_features.shape[0]
    fw = _mlp_forward(model, np.vstack([pos_features, neg_features]))
    delta = fw.scores[n:] - fw.scores[:n]
    loss = float(np.mean(pairwise_loss(delta)))
    g = sigmoid(delta) / n
    grads, _ = _mlp_backward(model, fw, np.concatenate([-g, g]))
    return loss, grads


def _apply(model: CrossModel, grads: CrossGrads, lr: float, step: int) -> None:
    for name, arr in (("w1", grads.w1), ("b1", grads.b1), ("w2", grads.w2), ("b2", grads.b2)):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"gradiente no finito en '{name}' en el paso {step}")
    model.w1 -= lr * grads.w1
    model.b1 -= lr * grads.b1
    model.w2 -= lr * grads.w2
    model.b2 -= lr * grads.b2


# ═══════════════════════════════════════════
#  Entrenamiento
# ═══════════════════════════════════════════

def fit_binary(features: np.ndarray, labels: np.ndarray, cfg: CrossTrainConfig) -> CrossModel:
    """Descenso por gradiente en minibatch sobre una matriz de features etiquetada.

    Con steps=0 devuelve la inicialización tal cual, sin estandarización.
    """
    if features.shape[0] == 0:
        raise ConfigError("no hay ejemplos para entrenar el cross-encoder")
    model = CrossModel.initialize(features.shape[1], cfg.hidden, cfg.rng_seed, CrossMode.BINARY)
    if cfg.steps:
        model.fit_standardization(features)
    rng = np.random.default_rng(cfg.rng_seed)
    n = features.shape[0]
    for step in range(cfg.steps):
        rows = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        loss, grads = binary_loss_and_grad(model, features[rows], labels[rows])
        if not np.isfinite(loss):
            raise NumericError(f"divergencia: pérdida no finita en el paso {step}")
        _apply(model, grads, cfg.learning_rate, step)
        model.loss_trace.append(loss)
    return model


def fit_pairwise(pos_features: np.ndarray, neg_features: np.ndarray, cfg: CrossTrainConfig) -> CrossModel:
    """Igual que fit_binary pero con la pérdida por pares (steps=0: inicialización pura)."""
    if pos_features.shape[0] == 0:
        raise ConfigError("no hay triples para entrenar el cross-encoder")
    model = CrossModel.initialize(pos_features.shape[1], cfg.hidden, cfg.rng_seed, CrossMode.PAIRWISE)
    if cfg.steps:
        model.fit_standardization(np.vstack([pos_features, neg_features]))
    rng = np.random.default_rng(cfg.rng_seed)
    n = pos_features.shape[0]
    for step in range(cfg.steps):
        rows = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        loss, grads = pairwise_loss_and_grad(model, pos_features[rows], neg_features[rows])
        if not np.isfinite(loss):
            raise NumericError(f"divergencia: pérdida no finita en el paso {step}")
        _apply(model, grads, cfg.learning_rate, step)
        model.loss_trace.append(loss)
    return model


@dataclass
class Retrieval:
    """Bi-encoder + índice de salidas usados para minar negativos y vectorizar."""
    model: BiencoderModel
    index: SearchIndex
    outputs: CorpusHandle
    task: Task

    def vector(self, record: Record) -> np.ndarray:
        return embed(self.model, featurize(encoding_text(record, self.task), self.model.num_buckets))


@dataclass(frozen=True)
class RankTriple:
    x: Record
    y_pos: Record
    y_neg: Record


def mine_hard_negatives(
    seed: Sequence[SeedExample],
    retrieval: Retrieval,
    negatives_per_doc: int = 2,
    counters: Counter[str] | None = None,
) -> list[RankTriple]:
    """Triples (x, y⁺, y⁻) con las salidas no-gold mejor recuperadas para cada semilla."""
    triples: list[RankTriple] = []
    for ex in seed:
        gold = normalize_text(ex.y.text)
        xv = retrieval.vector(ex.x).astype(np.float32)
        query = VectorStore(vectors=xv[None, :], ids=np.array([ex.x.id], dtype=np.uint64))
        k = min(negatives_per_doc + 1, retrieval.index.size)
        hood = retrieval.index.search(query, k)[0]
        negs = []
        for y_id, _ in hood.pairs():
            y = retrieval.outputs.get(y_id)
            if normalize_text(y.text) != gold:
                negs.append(y)
        negs = negs[:negatives_per_doc]
        if not negs:
            if counters is not None:
                counters["docs_without_negatives"] += 1
            logger.warning("Semilla %d: sin negativos recuperables; se omite", ex.x.id)
            continue
        triples.extend(RankTriple(ex.x, ex.y, y) for y in negs)
    return triples


def train_pairwise(triples: Sequence[RankTriple], retrieval: Retrieval, cfg: CrossTrainConfig) -> CrossModel:
    """Ajusta el modo pairwise sobre triples; vectores calculados con el bi-encoder."""
    if not triples:
        raise ConfigError("no hay triples: ninguna semilla tiene negativos recuperables")
    cache: dict[tuple[str, int], np.ndarray] = {}

    def vec(r: Record) -> np.ndarray:
        key = (r.side.value, r.id)
        if key not in cache:
            cache[key] = retrieval.vector(r)
        return cache[key]

    pos = np.vstack([interaction_features(t.x, t.y_pos, vec(t.x), vec(t.y_pos), retrieval.task) for t in triples])
    neg = np.vstack([interaction_features(t.x, t.y_neg, vec(t.x), vec(t.y_neg), retrieval.task) for t in triples])
    model = fit_pairwise(pos, neg, cfg)
    logger.info("Cross-encoder pairwise: %d triples, pérdida final %.4f", len(triples),
                model.loss_trace[-1] if model.loss_trace else float("nan"))
    return model


def sample_binary_negatives(candidates: Sequence[PairCandidate], num_positives: int, rng_seed: int) -> list[PairCandidate]:
    """Por positivo: CROSS_NEGS_TOP del decil superior de margin + CROSS_NEGS_UNIFORM uniformes."""
    if not candidates:
        return []
    ranked = sorted(candidates, key=lambda c: (-c.margin, c.x_id, c.y_id))
    rng = np.random.default_rng(rng_seed)
    decile = ranked[: max(1, -(-len(ranked) // 10))]
    n_top = min(CROSS_NEGS_TOP * num_positives, len(decile))
    top = rng.choice(len(decile), size=n_top, replace=False).tolist() if n_top else []
    top_set = set(top)
    rest = [i for i in range(len(ranked)) if i not in top_set]
    n_uni = min(CROSS_NEGS_UNIFORM * num_positives, len(rest))
    uniform = rng.choice(len(rest), size=n_uni, replace=False).tolist() if n_uni else []
    chosen = sorted(top_set | {rest[i] for i in uniform})
    return [ranked[i] for i in chosen]


def train_binary(
    positives: Sequence[SeedExample],
    negatives: Sequence[PairCandidate],
    cfg: CrossTrainConfig,
    *,
    source: FeatureSource,
    bimodel: BiencoderModel,
    task: Task,
) -> CrossModel:
    """Clasificador logístico: semillas (1) frente a candidatos del bi-encoder (0)."""
    if not positives or not negatives:
        raise ConfigError("train_binary necesita positivos y negativos")
    pos_rows = []
    for ex in positives:
        xv = embed(bimodel, featurize(encoding_text(ex.x, task), bimodel.num_buckets))
        yv = embed(bimodel, featurize(encoding_text(ex.y, task), bimodel.num_buckets))
        pos_rows.append(interaction_features(ex.x, ex.y, xv, yv, task))
    neg_rows = [candidate_features(c, source, task) for c in negatives]
    features = np.vstack(pos_rows + neg_rows)
    labels = np.concatenate([np.ones(len(pos_rows)), np.zeros(len(neg_rows))])
    model = fit_binary(features, labels, cfg)
    logger.info("Cross-encoder binario: %d positivos, %d negativos", len(pos_rows), len(neg_rows))
    return model


# ═══════════════════════════════════════════
#  Re-ranking
# ═══════════════════════════════════════════

class StoreFeatureSource:
    """FeatureSource sobre corpus + VectorStores ya calculados."""

    def __init__(self, inputs: CorpusHandle, outputs: CorpusHandle, x_store: VectorStore, y_store: VectorStore) -> None:
        self.corpora = {Side.INPUT: inputs, Side.OUTPUT: outputs}
        self.stores = {Side.INPUT: x_store, Side.OUTPUT: y_store}

    def record(self, side: Side, record_id: int) -> Record:
        corpus = self.corpora[side]
        if record_id not in corpus:
            raise UnknownRecordError(side.value, record_id)
        return corpus.get(record_id)

    def vector(self, side: Side, record_id: int) -> np.ndarray:
        store = self.stores[side]
        if record_id not in store:
            raise UnknownRecordError(side.value, record_id)
        return store.vector(record_id).astype(np.float64)


def candidate_features(c: PairCandidate, source: FeatureSource, task: Task | None = None) -> np.ndarray:
    x = source.record(Side.INPUT, c.x_id)
    y = source.record(Side.OUTPUT, c.y_id)
    return interaction_features(
        x, y, source.vector(Side.INPUT, c.x_id), source.vector(Side.OUTPUT, c.y_id), task
    )


def _ranked(cands: list[PairCandidate], top_n: int) -> list[PairCandidate]:
    cands.sort(key=lambda c: (-(c.cross_score or 0.0), -c.margin, c.x_id, c.y_id))
    return cands[:top_n]


def rerank(
    model: CrossModel,
    candidates: Sequence[PairCandidate],
    feature_source: FeatureSource,
    top_n: int,
    task: Task | None = None,
    workers: int = 1,
) -> list[PairCandidate]:
    """Puntúa con el cross-encoder y reordena: cross_score desc → margin desc → ids asc."""
    if top_n <= 0 or not candidates:
        return []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda c: candidate_features(c, feature_source, task), candidates))
    else:
        rows = [candidate_features(c, feature_source, task) for c in candidates]
    scores = score_batch(model, np.vstack(rows))
    if not np.all(np.isfinite(scores)):
        raise NumericError("score no finito en el re-ranking")
    out = [
        c.model_copy(update={"cross_score": float(s), "stage": Stage.CROSSENCODER})
        for c, s in zip(candidates, scores.tolist())
    ]
    return _ranked(out, top_n)


def rerank_external(
    candidates: Sequence[PairCandidate],
    scores: dict[str, float],
    top_n: int,
    counters: Counter[str] | None = None,
) -> list[PairCandidate]:
    """Re-ranking con scores de un cross-encoder externo (clave "x_id:y_id").

    Los candidatos sin score se descartan y se cuentan como "unscored".
    """
    out = []
    for c in candidates:
        s = scores.get(c.pair_key)
        if s is None or not np.isfinite(s):
            if counters is not None:
                counters["unscored"] += 1
            continue
        out.append(c.model_copy(update={"cross_score": float(s), "stage": Stage.CROSSENCODER}))
    if top_n <= 0:
        return []
    return _ranked(out, top_n)
