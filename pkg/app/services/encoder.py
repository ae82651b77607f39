"""
Bi-encoder de n-gramas hasheados + prefiltro binario multitarea.

Featurización:
  tokens = \\w+ sobre texto normalizado (NFC + case-fold)
  bucket(u) = blake2b("u:" + tok)            & (num_buckets − 1)
  bucket(b) = blake2b("b:" + tok1 + " " + tok2) & (num_buckets − 1)
  blake2b con clave fija HASH_KEY y digest de 8 bytes: estable entre plataformas.

Modelo:
  h = Σ c_j·E[j] / Σ c_j      (media ponderada de filas de la tabla)
  z = P·h                     (proyección d × d)
  v = z / ‖z‖                 (vector unitario; coseno = producto escalar)

Objetivo por instancia (softmax sobre positivo + negativos):
  L_nll = −log( exp(x·y⁺) / (exp(x·y⁺) + Σⱼ exp(x·y⁻ⱼ)) )
Prefiltro: p = σ(w·v + b), entropía cruzada binaria; L = L_nll + λ·L_prefilter.
Optimizador: descenso por gradiente con tasa fija (sin momento), determinista.
"""

import hashlib
from collections import Counter
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from app.core.config import DEGENERATE_NORM, HASH_KEY, NEGATIVES_PER_TYPE, NUM_BUCKETS
from app.core.errors import ConfigError, NumericError, UnembeddableRecordError
from app.core.logging import get_logger
from app.models import Record, SeedExample, Side, SpanSpotterConfig, Task, format_span
from app.models.pipeline import TrainConfig
from app.services.corpus import CorpusHandle, child_id, encoding_text, spot_spans, verbatim_overlap
from app.services.knn_index import VectorStore
from app.utils.normalization import normalize_text, tokenize
from app.utils.validation import check_finite, is_power_of_two

logger = get_logger(__name__)

_EMBED_CHUNK = 512


# ═══════════════════════════════════════════
#  Featurización
# ═══════════════════════════════════════════

@dataclass(frozen=True)
class HashedFeatures:
    """Mapa disperso bucket → cuenta (índices ordenados, cuentas > 0)."""
    idx: np.ndarray
    counts: np.ndarray
    num_buckets: int

    @property
    def entries(self) -> dict[int, int]:
        return {int(i): int(c) for i, c in zip(self.idx.tolist(), self.counts.tolist())}

    def __len__(self) -> int:
        return int(self.idx.shape[0])

    def scaled(self, factor: float) -> "HashedFeatures":
        return HashedFeatures(self.idx, self.counts * factor, self.num_buckets)


def _bucket(payload: str, mask: int) -> int:
    digest = hashlib.blake2b(payload.encode("utf-8"), key=HASH_KEY, digest_size=8).digest()
    return int.from_bytes(digest, "little") & mask


def featurize(text: str, num_buckets: int = NUM_BUCKETS) -> HashedFeatures:
    """Cuentas de unigramas y bigramas hasheados; texto vacío → sin entradas."""
    if not is_power_of_two(num_buckets):
        raise ConfigError(f"num_buckets debe ser potencia de dos; recibido {num_buckets}")
    mask = num_buckets - 1
    toks = tokenize(text)
    counts: Counter[int] = Counter(_bucket(f"u:{t}", mask) for t in toks)
    counts.update(_bucket(f"b:{a} {b}", mask) for a, b in zip(toks, toks[1:]))
    idx = np.array(sorted(counts), dtype=np.int64)
    return HashedFeatures(
        idx=idx,
        counts=np.array([counts[i] for i in idx.tolist()], dtype=np.float64),
        num_buckets=num_buckets,
    )


# ═══════════════════════════════════════════
#  Modelos
# ═══════════════════════════════════════════

class BiencoderModel:
    """Tabla de embeddings num_buckets × d + proyección d × d (float64)."""

    def __init__(
        self,
        embedding_table: np.ndarray,
        projection: np.ndarray,
        rng_seed: int = 0,
        loss_trace: list[float] | None = None,
    ) -> None:
        nb, d = embedding_table.shape
        if projection.shape != (d, d):
            raise ConfigError(f"proyección {projection.shape} incompatible con dim {d}")
        if not is_power_of_two(nb):
            raise ConfigError(f"num_buckets debe ser potencia de dos; recibido {nb}")
        self.embedding_table = embedding_table
        self.projection = projection
        self.rng_seed = rng_seed
        self.loss_trace: list[float] = list(loss_trace or [])

    @classmethod
    def initialize(cls, num_buckets: int, dim: int, rng_seed: int) -> "BiencoderModel":
        """E ~ N(0, 1), P = I, sembrado por rng_seed."""
        if not is_power_of_two(num_buckets):
            raise ConfigError(f"num_buckets debe ser potencia de dos; recibido {num_buckets}")
        rng = np.random.default_rng(rng_seed)
        table = rng.standard_normal((num_buckets, dim))
        return cls(table, np.eye(dim), rng_seed)

    @property
    def num_buckets(self) -> int:
        return int(self.embedding_table.shape[0])

    @property
    def dim(self) -> int:
        return int(self.embedding_table.shape[1])

    def copy(self) -> "BiencoderModel":
        return BiencoderModel(
            self.embedding_table.copy(), self.projection.copy(), self.rng_seed, self.loss_trace
        )


@dataclass
class PrefilterModel:
    """Clasificador logístico sobre el vector del bi-encoder."""
    weight: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, dim: int) -> "PrefilterModel":
        return cls(np.zeros(dim), 0.0)


@dataclass
class TrainInstance:
    """Una entrada, su salida positiva y n negativas."""
    x: HashedFeatures
    y_pos: HashedFeatures
    y_negs: list[HashedFeatures]


@dataclass
class BiencoderGrads:
    """Gradientes: filas tocadas de E (dispersas), P, y el prefiltro."""
    embedding_rows: np.ndarray
    embedding_values: np.ndarray
    projection: np.ndarray
    prefilter_weight: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prefilter_bias: float = 0.0

    def embedding_dense(self, num_buckets: int) -> np.ndarray:
        out = np.zeros((num_buckets, self.projection.shape[0]))
        out[self.embedding_rows] = self.embedding_values
        return out


def sigmoid(z: np.ndarray | float) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


# ═══════════════════════════════════════════
#  Forward / backward
# ═══════════════════════════════════════════

@dataclass
class _Forward:
    feats: list[HashedFeatures]
    weights: list[np.ndarray]
    hidden: np.ndarray
    norms: np.ndarray
    vectors: np.ndarray


def _forward(model: BiencoderModel, feats: Sequence[HashedFeatures]) -> _Forward:
    d = model.dim
    hidden = np.zeros((len(feats), d))
    weights = []
    for i, f in enumerate(feats):
        if len(f) == 0:
            raise UnembeddableRecordError("registro no embebible: sin features")
        if f.num_buckets != model.num_buckets:
            raise ConfigError(
                f"features de {f.num_buckets} buckets para un modelo de {model.num_buckets}"
            )
        w = f.counts / f.counts.sum()
        weights.append(w)
        hidden[i] = w @ model.embedding_table[f.idx]
    z = hidden @ model.projection.T
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < DEGENERATE_NORM):
        raise NumericError("embedding degenerado: norma previa a normalizar < 1e-12")
    return _Forward(list(feats), weights, hidden, norms, z / norms[:, None])


def _backward(model: BiencoderModel, fw: _Forward, d_vectors: np.ndarray) -> BiencoderGrads:
    """Retropropaga dL/dv a E y P a través de la normalización."""
    v = fw.vectors
    dz = (d_vectors - v * np.sum(v * d_vectors, axis=1, keepdims=True)) / fw.norms[:, None]
    d_proj = dz.T @ fw.hidden
    d_hidden = dz @ model.projection

    rows = np.concatenate([f.idx for f in fw.feats]) if fw.feats else np.zeros(0, dtype=np.int64)
    vals = (
        np.concatenate([w[:, None] * d_hidden[i][None, :] for i, w in enumerate(fw.weights)])
        if fw.feats else np.zeros((0, model.dim))
    )
    uniq, inverse = np.unique(rows, return_inverse=True)
    acc = np.zeros((uniq.shape[0], model.dim))
    np.add.at(acc, inverse, vals)
    return BiencoderGrads(embedding_rows=uniq, embedding_values=acc, projection=d_proj)


def embed(model: BiencoderModel, feats: HashedFeatures) -> np.ndarray:
    """Vector unitario de un conjunto de features (no vacío)."""
    return _forward(model, [feats]).vectors[0]


def embed_batch(model: BiencoderModel, feats: Sequence[HashedFeatures], workers: int = 1) -> np.ndarray:
    """Embeddings por lotes; el orden de salida es el de entrada."""
    chunks = [feats[s:s + _EMBED_CHUNK] for s in range(0, len(feats), _EMBED_CHUNK)]
    if not chunks:
        return np.zeros((0, model.dim))
    if workers <= 1 or len(chunks) == 1:
        parts = [_forward(model, c).vectors for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _forward(model, c).vectors, chunks))
    return np.vstack(parts)


def embed_corpus(
    model: BiencoderModel,
    corpus: CorpusHandle,
    task: Task,
    workers: int = 1,
) -> tuple[VectorStore, list[int]]:
    """Embebe todo el corpus.

    Returns:
        (VectorStore, ids omitidos por no tener features)
    """
    feats: list[HashedFeatures] = []
    ids: list[int] = []
    skipped: list[int] = []
    for r in corpus.records:
        f = featurize(encoding_text(r, task), model.num_buckets)
        if len(f) == 0:
            skipped.append(r.id)
            continue
        feats.append(f)
        ids.append(r.id)
    if skipped:
        logger.warning("%d registros sin features omitidos al embeber", len(skipped))
    vectors = embed_batch(model, feats, workers)
    if not ids:
        return VectorStore.empty(model.dim), skipped
    return VectorStore.from_rows(ids, vectors), skipped


# ═══════════════════════════════════════════
#  Pérdidas
# ═══════════════════════════════════════════

def softmax_nll(scores: np.ndarray) -> tuple[float, np.ndarray]:
    """−log softmax(scores)[0] y su gradiente respecto de scores."""
    top = float(np.max(scores))
    shifted = np.exp(scores - top)
    total = float(shifted.sum())
    loss = top + np.log(total) - float(scores[0])
    grad = shifted / total
    grad[0] -= 1.0
    return float(loss), grad


def _nll_terms(
    vectors: np.ndarray,
    instances: Sequence[tuple[int, int, Sequence[int]]],
) -> tuple[float, np.ndarray]:
    """Media de L_nll sobre instancias (x, y⁺, [y⁻...]) dadas como filas del pool."""
    d_vectors = np.zeros_like(vectors)
    total = 0.0
    n = len(instances)
    for xi, pos, negs in instances:
        cand = np.array([pos, *negs], dtype=np.int64)
        scores = vectors[cand] @ vectors[xi]
        loss, g = softmax_nll(scores)
        total += loss
        d_vectors[xi] += (g @ vectors[cand]) / n
        np.add.at(d_vectors, cand, (g[:, None] * vectors[xi][None, :]) / n)
    return total / n, d_vectors


def _prefilter_terms(
    vectors: np.ndarray,
    examples: Sequence[tuple[int, float]],
    prefilter: PrefilterModel,
) -> tuple[float, np.ndarray, np.ndarray, float]:
    """BCE media del prefiltro sobre (fila, etiqueta); gradientes respecto de v, w y b."""
    d_vectors = np.zeros_like(vectors)
    if not examples:
        return 0.0, d_vectors, np.zeros_like(prefilter.weight), 0.0
    rows = np.array([r for r, _ in examples], dtype=np.int64)
    labels = np.array([y for _, y in examples], dtype=np.float64)
    logits = vectors[rows] @ prefilter.weight + prefilter.bias
    loss = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))
    dz = (sigmoid(logits) - labels) / rows.shape[0]
    np.add.at(d_vectors, rows, dz[:, None] * prefilter.weight[None, :])
    return loss, d_vectors, dz @ vectors[rows], float(dz.sum())


def nll_loss_and_grad(model: BiencoderModel, inst: TrainInstance) -> tuple[float, BiencoderGrads]:
    """L_nll de una instancia y gradientes analíticos exactos respecto de E y P."""
    if not inst.y_negs:
        raise ConfigError("la instancia necesita al menos un negativo")
    pool = [inst.x, inst.y_pos, *inst.y_negs]
    fw = _forward(model, pool)
    loss, d_vectors = _nll_terms(fw.vectors, [(0, 1, list(range(2, len(pool))))])
    grads = _backward(model, fw, d_vectors)
    for name, arr in (("embedding_table", grads.embedding_values), ("projection", grads.projection)):
        check_finite(name, arr)
    return loss, grads


def apply_update(
    model: BiencoderModel,
    prefilter: PrefilterModel,
    grads: BiencoderGrads,
    lr: float,
) -> None:
    model.embedding_table[grads.embedding_rows] -= lr * grads.embedding_values
    model.projection -= lr * grads.projection
    if grads.prefilter_weight.size:
        prefilter.weight -= lr * grads.prefilter_weight
    prefilter.bias -= lr * grads.prefilter_bias


# ═══════════════════════════════════════════
#  Negativos sintéticos (RC)
# ═══════════════════════════════════════════

def synthesize_negatives(
    example: SeedExample,
    spotter: SpanSpotterConfig | None,
    corpus: CorpusHandle,
    per_type: int = NEGATIVES_PER_TYPE,
    rng_seed: int | Sequence[int] = 0,
    counters: Counter[str] | None = None,
) -> list[Record]:
    """Negativos RC: (a) mismo pasaje con otro span; (b) respuesta gold con otro pasaje.

    Los pasajes alternativos de (b) excluyen los que contienen literalmente
    la respuesta gold. Ids: (y.id << 20) | (0x80000 + j).
    """
    if example.task != Task.READING_COMPREHENSION:
        raise ConfigError("los negativos sintéticos solo aplican a reading_comprehension")
    rng = np.random.default_rng(rng_seed)
    gold = example.y
    gold_span = gold.answer_span()
    gold_answer = gold.answer_text()
    gold_norm = normalize_text(gold_answer)
    out: list[Record] = []

    alternatives = [
        s for s in spot_spans(gold.text, spotter)
        if (s.begin, s.end) != gold_span and normalize_text(gold.text[s.begin:s.end]) != gold_norm
    ]
    take = min(per_type, len(alternatives))
    for pick in sorted(rng.choice(len(alternatives), size=take, replace=False).tolist()) if take else []:
        s = alternatives[pick]
        out.append(Record(
            id=child_id(gold.id, len(out), synthetic=True),
            text=gold.text,
            side=Side.OUTPUT,
            meta={
                "answer_span": format_span(s.begin, s.end),
                "answer_text": gold.text[s.begin:s.end],
                "span_type": s.kind,
                "synthetic": "span_swap",
            },
        ))

    gold_passage = normalize_text(gold.text)
    passages: dict[str, str] = {}
    for r in corpus.records:
        norm = normalize_text(r.text)
        if norm == gold_passage or norm in passages or verbatim_overlap(gold_answer, r.text):
            continue
        passages[norm] = r.text
    texts = list(passages.values())
    take = min(per_type, len(texts))
    for pick in sorted(rng.choice(len(texts), size=take, replace=False).tolist()) if take else []:
        out.append(Record(
            id=child_id(gold.id, len(out), synthetic=True),
            text=texts[pick],
            side=Side.OUTPUT,
            meta={"answer_text": gold_answer, "synthetic": "passage_swap"},
        ))

    if not out:
        if counters is not None:
            counters["synthetic_empty"] += 1
        logger.warning("Ejemplo %d: sin spans ni pasajes alternativos para negativos", gold.id)
    return out


# ═══════════════════════════════════════════
#  Entrenamiento
# ═══════════════════════════════════════════

def _corpus_features(corpus: CorpusHandle, task: Task, num_buckets: int) -> list[HashedFeatures]:
    feats = [featurize(encoding_text(r, task), num_buckets) for r in corpus.records]
    return [f for f in feats if len(f)]


def train(
    seed: list[SeedExample],
    output_corpus: CorpusHandle,
    cfg: TrainConfig,
    *,
    task: Task | None = None,
    prefilter_corpus: CorpusHandle | None = None,
    spotter: SpanSpotterConfig | None = None,
) -> tuple[BiencoderModel, PrefilterModel]:
    """Entrena bi-encoder y prefiltro con L = L_nll + λ·L_prefilter.

    Negativos por instancia: positivos del resto del batch + n_random_negs
    muestras del corpus de salidas + negativos sintéticos (RC), todos en la
    misma softmax. Prefiltro: positivos = preguntas semilla (RC) o salidas
    semilla (resumen); prefilter_negs negativos por positivo muestreados de
    prefilter_corpus (por defecto, el corpus de salidas).

    Raises:
        ConfigError:  seed o corpus vacío, o instancias sin negativos.
        NumericError: pérdida o gradiente no finito (nombra el paso).
    """
    if not seed:
        raise ConfigError("el seed set está vacío")
    if len(output_corpus) == 0:
        raise ConfigError("el corpus de salidas está vacío")
    task = task or seed[0].task
    batch_size = min(cfg.batch_size, len(seed))
    nb = cfg.num_buckets

    seed_x = [featurize(encoding_text(ex.x, task), nb) for ex in seed]
    seed_y = [featurize(encoding_text(ex.y, task), nb) for ex in seed]
    for i, (fx, fy) in enumerate(zip(seed_x, seed_y)):
        if not len(fx) or not len(fy):
            raise UnembeddableRecordError(f"ejemplo semilla {i}: registro no embebible")

    synthetic: list[list[HashedFeatures]] = [[] for _ in seed]
    counters: Counter[str] = Counter()
    if task == Task.READING_COMPREHENSION and cfg.synthetic_per_type:
        for i, ex in enumerate(seed):
            negs = synthesize_negatives(
                ex, spotter, output_corpus, cfg.synthetic_per_type, [cfg.rng_seed, i], counters
            )
            synthetic[i] = [f for f in (featurize(encoding_text(r, task), nb) for r in negs) if len(f)]

    corpus_feats = _corpus_features(output_corpus, task, nb)
    pref_source = prefilter_corpus if prefilter_corpus is not None else output_corpus
    pref_feats = _corpus_features(pref_source, task, nb) if pref_source is not output_corpus else corpus_feats
    if not corpus_feats or not pref_feats:
        raise ConfigError("ningún registro del corpus tiene features")

    n_negs = (batch_size - 1) + cfg.n_random_negs + min((len(s) for s in synthetic), default=0)
    if n_negs < 1:
        raise ConfigError("cada instancia necesita al menos un negativo (batch_size o n_random_negs)")

    model = BiencoderModel.initialize(nb, cfg.dim, cfg.rng_seed)
    prefilter = PrefilterModel.zeros(cfg.dim)
    rng = np.random.default_rng(cfg.rng_seed)
    positive_side = seed_x if task == Task.READING_COMPREHENSION else seed_y

    logger.info(
        "Entrenando bi-encoder: %d semillas, %d pasos, batch %d, %d negativos por instancia",
        len(seed), cfg.steps, batch_size, n_negs,
    )
    for step in range(cfg.steps):
        batch = rng.choice(len(seed), size=batch_size, replace=False)
        pool: list[HashedFeatures] = []
        slot: dict[tuple[str, int], int] = {}

        def at(key: tuple[str, int], f: HashedFeatures) -> int:
            if key not in slot:
                slot[key] = len(pool)
                pool.append(f)
            return slot[key]

        instances: list[tuple[int, int, list[int]]] = []
        for i in batch.tolist():
            xi = at(("sx", i), seed_x[i])
            pos = at(("sy", i), seed_y[i])
            negs = [at(("sy", j), seed_y[j]) for j in batch.tolist() if j != i]
            for c in rng.integers(0, len(corpus_feats), size=cfg.n_random_negs).tolist():
                negs.append(at(("c", c), corpus_feats[c]))
            for j, f in enumerate(synthetic[i]):
                negs.append(at(("syn", i * 1024 + j), f))
            instances.append((xi, pos, negs))

        pref_examples: list[tuple[int, float]] = []
        for i in batch.tolist():
            key = ("sx", i) if task == Task.READING_COMPREHENSION else ("sy", i)
            pref_examples.append((at(key, positive_side[i]), 1.0))
            for c in rng.integers(0, len(pref_feats), size=cfg.prefilter_negs).tolist():
                pref_examples.append((at(("p", c), pref_feats[c]), 0.0))

        fw = _forward(model, pool)
        nll, d_nll = _nll_terms(fw.vectors, instances)
        bce, d_pref, d_w, d_b = _prefilter_terms(fw.vectors, pref_examples, prefilter)
        loss = nll + cfg.multitask_weight * bce
        if not np.isfinite(loss):
            logger.error("Pérdida no finita en el paso %d", step)
            raise NumericError(f"divergencia: pérdida no finita en el paso {step}")

        grads = _backward(model, fw, d_nll + cfg.multitask_weight * d_pref)
        grads.prefilter_weight = cfg.multitask_weight * d_w
        grads.prefilter_bias = cfg.multitask_weight * d_b
        for name, arr in (
            ("embedding_table", grads.embedding_values),
            ("projection", grads.projection),
            ("prefilter", grads.prefilter_weight),
        ):
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"gradiente no finito en '{name}' en el paso {step}")
        apply_update(model, prefilter, grads, cfg.learning_rate)
        model.loss_trace.append(float(loss))

        if step % 100 == 0:
            logger.debug("paso %d: L=%.5f (nll=%.5f, prefiltro=%.5f)", step, loss, nll, bce)

    if model.loss_trace:
        logger.info(
            "Bi-encoder entrenado: pérdida %.4f → %.4f", model.loss_trace[0], model.loss_trace[-1]
        )
    if counters:
        logger.info("Negativos sintéticos: %s", dict(counters))
    return model, prefilter


# ═══════════════════════════════════════════
#  Prefiltro
# ═══════════════════════════════════════════

def prefilter(model: PrefilterModel, feats: HashedFeatures, bimodel: BiencoderModel) -> float:
    """σ(w · embed(feats) + b) ∈ [0, 1]."""
    v = embed(bimodel, feats)
    return float(sigmoid(float(v @ model.weight) + model.bias))


def prefilter_scores(model: PrefilterModel, vectors: np.ndarray) -> np.ndarray:
    """Probabilidades del prefiltro para una matriz de vectores ya embebidos."""
    if vectors.shape[0] == 0:
        return np.zeros(0)
    return sigmoid(vectors.astype(np.float64) @ model.weight + model.bias)


def retention_threshold(scores: np.ndarray, retention: float) -> tuple[float, np.ndarray]:
    """Umbral τ = cuantil (1 − retention) y máscara scores ≥ τ.

    retention = 1 conserva todo; los empates en τ se conservan.
    """
    if not 0 < retention <= 1:
        raise ConfigError(f"retention debe estar en (0, 1]; recibido {retention}")
    if scores.size == 0:
        return 0.0, np.zeros(0, dtype=bool)
    tau = float(np.quantile(scores, 1.0 - retention))
    return tau, scores >= tau
