"""
Arnés de evaluación: corpus sintéticos con pares plantados y diagnósticos
de abstractividad (precisión ROUGE de la salida frente a su entrada).

Corpus sintético (vocabulario "w0" … "w{V-1}"):
  - entrada    → input_len tokens distintos
  - salida gold → ⌊signal_overlap·output_len⌋ tokens dispersos de su entrada
                  + tokens frescos ajenos a ella, barajados
  - distractor → una racha contigua de ⌊distractor_overlap·output_len⌋ tokens
                  de una entrada cualquiera, rodeada de relleno

La racha contigua comparte bigramas con su fuente: es la trampa léxica que
engaña al bi-encoder y que el cross-encoder aprende a descartar.

ROUGE aquí es la variante mínima de precisión: sin stemming ni stopwords,
tokens de app.utils.normalization.tokenize.
"""

import re
from collections import Counter
from collections.abc import Callable, Sequence
from fractions import Fraction
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np

from app.adapters.workdir import read_json, write_json
from app.core.config import HISTOGRAM_WIDTH
from app.core.errors import ConfigError
from app.core.logging import get_logger
from app.models import Record, SeedExample, Side, Stage, Task
from app.models.evaluation import RougeReport, RougeScores, StageRouge, SyntheticSpec
from app.models.pipeline import MinedPair
from app.services.corpus import CorpusHandle, export_jsonl, export_seed_jsonl, make_corpus
from app.utils.normalization import tokenize

logger = get_logger(__name__)

RougeN = Literal[1, 2, "L"]

PRESETS: dict[str, Callable[..., SyntheticSpec]] = {
    "separable": SyntheticSpec.separable_preset,
    "lexical_trap": SyntheticSpec.lexical_trap_preset,
    "toy": SyntheticSpec.toy_preset,
}


# ═══════════════════════════════════════════
#  Corpus sintético
# ═══════════════════════════════════════════

class SyntheticCorpus(NamedTuple):
    inputs: CorpusHandle
    outputs: CorpusHandle
    gold: dict[int, int]            # x_id → y_id gold
    seed: list[SeedExample]


def _check_feasible(spec: SyntheticSpec) -> tuple[int, int]:
    copied = int(spec.signal_overlap * spec.output_len)
    run = int(spec.distractor_overlap * spec.output_len)
    if spec.input_len > spec.vocab_size:
        raise ConfigError(f"vocab_size ({spec.vocab_size}) < input_len ({spec.input_len})")
    if spec.vocab_size - spec.input_len < spec.output_len:
        raise ConfigError(
            f"vocab_size ({spec.vocab_size}) insuficiente: se necesitan "
            f"input_len + output_len = {spec.input_len + spec.output_len} tokens"
        )
    if copied > spec.input_len or run > spec.input_len:
        raise ConfigError(
            f"output_len·overlap ({max(copied, run)}) supera input_len ({spec.input_len})"
        )
    return copied, run


def _text(tokens: np.ndarray) -> str:
    return " ".join(f"w{t}" for t in tokens)


def _fresh(rng: np.random.Generator, vocab_size: int, exclude: np.ndarray, count: int) -> np.ndarray:
    if count == 0:
        return np.empty(0, dtype=np.int64)
    pool = np.setdiff1d(np.arange(vocab_size), exclude, assume_unique=True)
    return rng.choice(pool, size=count, replace=False)


def _gold_output(rng: np.random.Generator, spec: SyntheticSpec, source: np.ndarray, copied: int) -> np.ndarray:
    kept = source[np.sort(rng.choice(spec.input_len, size=copied, replace=False))]
    fresh = _fresh(rng, spec.vocab_size, source, spec.output_len - copied)
    return rng.permutation(np.concatenate([kept, fresh]))


def _distractor(rng: np.random.Generator, spec: SyntheticSpec, source: np.ndarray, run: int) -> np.ndarray:
    start = int(rng.integers(0, spec.input_len - run + 1))
    block = source[start:start + run]
    filler = _fresh(rng, spec.vocab_size, source, spec.output_len - run)
    offset = int(rng.integers(0, len(filler) + 1))
    return np.concatenate([filler[:offset], block, filler[offset:]])


def generate(spec: SyntheticSpec) -> SyntheticCorpus:
    """Corpus de entradas, de salidas (gold + distractores), pares gold y seed set.

    El seed set sale de seed_size pares plantados adicionales que no están en
    los corpus. Determinista para un mismo spec.rng_seed.
    """
    copied, run = _check_feasible(spec)
    rng = np.random.default_rng(spec.rng_seed)
    total_inputs = spec.num_pairs + spec.seed_size
    sources = [rng.choice(spec.vocab_size, size=spec.input_len, replace=False) for _ in range(total_inputs)]
    golds = [_gold_output(rng, spec, src, copied) for src in sources]
    distractors = [
        _distractor(rng, spec, sources[int(rng.integers(0, total_inputs))], run)
        for _ in range(spec.distractor_count)
    ]

    y_tokens = golds[: spec.num_pairs] + distractors
    y_ids = rng.permutation(len(y_tokens))
    inputs = make_corpus(
        [Record(id=i, text=_text(sources[i]), side=Side.INPUT) for i in range(spec.num_pairs)],
        Side.INPUT,
    )
    outputs = make_corpus(
        [Record(id=int(y_ids[j]), text=_text(toks), side=Side.OUTPUT) for j, toks in enumerate(y_tokens)],
        Side.OUTPUT,
    )
    gold = {i: int(y_ids[i]) for i in range(spec.num_pairs)}
    seed = [
        SeedExample(
            x=Record(id=j, text=_text(sources[spec.num_pairs + j]), side=Side.INPUT),
            y=Record(id=j, text=_text(golds[spec.num_pairs + j]), side=Side.OUTPUT),
            task=Task.SUMMARIZATION,
        )
        for j in range(spec.seed_size)
    ]
    logger.info(
        "Corpus sintético: %d entradas, %d salidas (%d distractores), %d semillas",
        len(inputs), len(outputs), spec.distractor_count, len(seed),
    )
    return SyntheticCorpus(inputs, outputs, gold, seed)


def save_gold(gold: dict[int, int], path: str | Path) -> Path:
    p = Path(path)
    write_json(p, {str(x): y for x, y in sorted(gold.items())})
    return p


def load_gold(path: str | Path) -> dict[int, int]:
    raw = read_json(Path(path))
    if not isinstance(raw, dict):
        raise ConfigError(f"{Path(path).name}: se esperaba un objeto {{x_id: y_id}}")
    try:
        return {int(x): int(y) for x, y in raw.items()}
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{Path(path).name}: ids no enteros ({e})") from e


def write_synthetic(data: SyntheticCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Escribe x.jsonl, y.jsonl, seed.jsonl y gold.json en out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "x": export_jsonl(data.inputs, out / "x.jsonl"),
        "y": export_jsonl(data.outputs, out / "y.jsonl"),
        "seed": export_seed_jsonl(data.seed, out / "seed.jsonl"),
        "gold": save_gold(data.gold, out / "gold.json"),
    }
    logger.info("Corpus sintético escrito en %s", out)
    return paths


# ═══════════════════════════════════════════
#  ROUGE de precisión
# ═══════════════════════════════════════════

def _ngrams(tokens: list[str], n: int) -> Counter[tuple[str, ...]]:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longitud de la subsecuencia común más larga (programación dinámica en O(|a|·|b|))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok in a:
        cur = [0]
        for j, other in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if tok == other else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _precision_tokens(cand: list[str], src: list[str], n: RougeN) -> Fraction:
    if n == "L":
        return Fraction(lcs_length(cand, src), len(cand))
    if n not in (1, 2):
        raise ConfigError(f"n de ROUGE no soportado: {n!r}")
    grams = _ngrams(cand, n)
    total = sum(grams.values())
    if total == 0:
        return Fraction(0)
    ref = _ngrams(src, n)
    return Fraction(sum(min(c, ref[g]) for g, c in grams.items()), total)


def rouge_precision_exact(candidate: str, source: str, n: RougeN) -> Fraction:
    """Precisión ROUGE-n (o L) exacta del candidato frente a la fuente.

    Un candidato de un solo token no tiene bigramas: ROUGE-2 = 0.
    """
    cand = tokenize(candidate)
    if not cand:
        raise ConfigError("candidato vacío tras tokenizar")
    return _precision_tokens(cand, tokenize(source), n)


def rouge_precision(candidate: str, source: str, n: RougeN) -> float:
    return float(rouge_precision_exact(candidate, source, n))


def rouge_scores_exact(candidate: str, source: str) -> tuple[Fraction, Fraction, Fraction]:
    cand = tokenize(candidate)
    if not cand:
        raise ConfigError("candidato vacío tras tokenizar")
    src = tokenize(source)
    return (_precision_tokens(cand, src, 1), _precision_tokens(cand, src, 2), _precision_tokens(cand, src, "L"))


# ═══════════════════════════════════════════
#  Informe de abstractividad
# ═══════════════════════════════════════════

_SOURCE_MARKERS = re.compile(r"\((?:AP|Reuters|AFP|CNN|UPI)\)|\bCNN\b|\bReuters\b|\bAssociated Press\b")
_NUM_BUCKETS = round(1 / HISTOGRAM_WIDTH)


def _bucket(value: Fraction) -> int:
    return min(int(value / Fraction(HISTOGRAM_WIDTH).limit_denominator()), _NUM_BUCKETS - 1)


def _mean(values: Sequence[Fraction]) -> float:
    return float(sum(values, Fraction(0)) / len(values))


def stage_rouge(pairs: Sequence[tuple[str, str]]) -> StageRouge:
    """ROUGE de cada (salida, entrada); medias exactas antes de pasar a float."""
    if not pairs:
        raise ConfigError("no hay pares para el informe ROUGE")
    exact = [rouge_scores_exact(y, x) for y, x in pairs]
    columns = {"r1": [e[0] for e in exact], "r2": [e[1] for e in exact], "rl": [e[2] for e in exact]}
    histograms: dict[str, list[int]] = {}
    for name, values in columns.items():
        counts = [0] * _NUM_BUCKETS
        for v in values:
            counts[_bucket(v)] += 1
        histograms[name] = counts

    lengths = [len(tokenize(y)) for y, _ in pairs]
    markers = sum(1 for y, _ in pairs if _SOURCE_MARKERS.search(y))
    return StageRouge(
        count=len(pairs),
        mean_r1=_mean(columns["r1"]),
        mean_r2=_mean(columns["r2"]),
        mean_rl=_mean(columns["rl"]),
        mean_output_tokens=sum(lengths) / len(lengths),
        source_marker_rate=markers / len(pairs),
        histograms=histograms,
        per_pair=[RougeScores(r1=float(a), r2=float(b), rl=float(c)) for a, b, c in exact],
    )


def abstractiveness_report(
    pairs: Sequence[MinedPair],
    reference: Sequence[SeedExample] | None = None,
    limit: int | None = None,
) -> RougeReport:
    """Precisión ROUGE de y frente a x por etapa (biencoder / crossencoder).

    limit recorta cada etapa a sus primeros pares por rank. reference añade
    un bloque "reference" calculado sobre el seed set.
    """
    if not pairs:
        raise ConfigError("el informe de abstractividad necesita al menos un par")
    report = RougeReport()
    for stage in Stage:
        subset = sorted((p for p in pairs if p.stage == stage), key=lambda p: p.rank)
        if limit is not None:
            subset = subset[:limit]
        if subset:
            report.stages[stage.value] = stage_rouge([(p.y_text, p.x_text) for p in subset])
    if reference:
        report.stages["reference"] = stage_rouge([(ex.y.text, ex.x.text) for ex in reference])

    for name, block in report.stages.items():
        logger.info(
            "ROUGE %s (%d pares): R1=%.4f R2=%.4f RL=%.4f",
            name, block.count, block.mean_r1, block.mean_r2, block.mean_rl,
        )
    return report
