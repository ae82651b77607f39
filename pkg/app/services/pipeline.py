"""
Orquestación del pipeline por etapas con artefactos persistidos.

  ingest → train → embed → index → mine → train_cross → filter → export

Cada etapa escribe en <work_dir>/<etapa>/ sus salidas y, al final,
artifact.json (StageArtifact). Antes de ejecutar una etapa se comprueba
que todas las anteriores tienen artefacto, que su config_hash coincide con
el config actual y que sus ficheros de salida no han cambiado.

El config_hash de una etapa cubre solo los campos que la afectan a ella y a
las anteriores: cambiar final_top_n no invalida el entrenamiento.

Contadores de cada etapa: records_out + filtered + degenerate = records_in.
"""

import hashlib
import json
from collections import Counter
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

from app.adapters.checkpoints import load_biencoder, load_crossmodel, save_biencoder, save_crossmodel, sidecar_path
from app.adapters.external_scorer import HttpPairScorer, import_scores_jsonl, pair_texts
from app.adapters.vector_file import load_index, load_vectors, save_index, save_vectors
from app.adapters.workdir import file_sha256, read_json, write_json
from app.core.errors import ConfigError, MissingArtifactError, StaleArtifactError
from app.core.logging import get_logger
from app.core.settings import config_hash
from app.models import PairCandidate, Record, SeedExample, Side, Task, span_is_valid
from app.models.pipeline import STAGE_ORDER, MinedDataset, PipelineConfig, PipelineStage, StageArtifact
from app.services import crossfilter, dataset, encoder
from app.services.corpus import (
    CorpusHandle,
    child_id,
    export_jsonl,
    export_seed_jsonl,
    filter_min_sentences,
    ingest_jsonl,
    load_seed_jsonl,
    make_corpus,
    overlap_filter_for,
    shard_by_key,
    split_corpus,
    split_outputs,
)
from app.services.knn_index import ExactIndex, IvfIndex, VectorStore, build
from app.services.miner import load_candidates, mine, save_candidates
from app.services.ports import OverlapFilter

logger = get_logger(__name__)

ARTIFACT_FILE = "artifact.json"

# Campos del config que afectan a cada etapa.
STAGE_FIELDS: dict[PipelineStage, tuple[str, ...]] = {
    PipelineStage.INGEST: ("task", "x_corpus", "y_corpus", "seed_path", "min_doc_sentences", "spotter"),
    PipelineStage.TRAIN: ("biencoder", "rng_seed"),
    PipelineStage.EMBED: ("retention",),
    PipelineStage.INDEX: ("index_kind", "nlist", "shard_key", "shard_granularity"),
    PipelineStage.MINE: ("margin",),
    PipelineStage.TRAIN_CROSS: ("cross",),
    PipelineStage.FILTER: ("final_top_n", "cross_scorer", "cross_scores_path"),
    PipelineStage.EXPORT: (),
}


# ═══════════════════════════════════════════
#  Directorio de trabajo y artefactos
# ═══════════════════════════════════════════

def stage_config_hash(cfg: PipelineConfig, stage: PipelineStage) -> str:
    """sha256 de los campos del config que afectan a stage y a sus anteriores."""
    fields: set[str] = set()
    for s in STAGE_ORDER[: STAGE_ORDER.index(stage) + 1]:
        fields.update(STAGE_FIELDS[s])
    payload = cfg.model_dump(mode="json", include=fields)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def derived_seed(base: int, block: int) -> int:
    """Semilla de un bloque: rng_seed global + rng_seed del bloque (mod 2⁶⁴)."""
    return (base + block) % 2 ** 64


class Workdir:
    """Rutas y artefactos de una ejecución."""

    def __init__(self, root: str | Path) -> None:
        if not str(root):
            raise ConfigError("work_dir no configurado")
        self.root = Path(root)

    def stage_dir(self, stage: PipelineStage) -> Path:
        return self.root / stage.value

    def path(self, stage: PipelineStage, name: str) -> Path:
        return self.stage_dir(stage) / name

    def read_artifact(self, stage: PipelineStage) -> StageArtifact | None:
        p = self.path(stage, ARTIFACT_FILE)
        if not p.is_file():
            return None
        return StageArtifact.model_validate(read_json(p))

    def write_artifact(self, artifact: StageArtifact) -> Path:
        p = self.path(artifact.stage, ARTIFACT_FILE)
        write_json(p, artifact.model_dump(mode="json"))
        return p


def _source_hashes(cfg: PipelineConfig) -> dict[str, str]:
    out = {}
    for name in ("x_corpus", "y_corpus", "seed_path"):
        raw = getattr(cfg, name)
        if raw:
            p = Path(raw)
            if not p.is_file():
                raise MissingArtifactError(f"{name} ({p})")
            out[name] = file_sha256(p)
    return out


def _validate(cfg: PipelineConfig, wd: Workdir, stage: PipelineStage) -> dict[str, str]:
    """Comprueba el artefacto de una etapa; devuelve los hashes de sus salidas."""
    art = wd.read_artifact(stage)
    if art is None:
        raise MissingArtifactError(f"{stage.value}/{ARTIFACT_FILE}")
    if art.config_hash != stage_config_hash(cfg, stage):
        raise StaleArtifactError(f"la etapa '{stage.value}' se generó con otro config")
    hashes: dict[str, str] = {}
    for name, rel in art.outputs.items():
        p = wd.path(stage, rel)
        if not p.is_file():
            raise MissingArtifactError(f"{stage.value}/{rel}")
        digest = file_sha256(p)
        if digest != art.output_hashes.get(name):
            raise StaleArtifactError(f"{stage.value}/{rel} cambió desde que se generó")
        hashes[f"{stage.value}/{name}"] = digest
    if stage == PipelineStage.INGEST and _source_hashes(cfg) != art.input_hashes:
        raise StaleArtifactError("los ficheros de entrada cambiaron desde la ingesta")
    return hashes


def check_upstream(cfg: PipelineConfig, stage: PipelineStage, wd: Workdir | None = None) -> dict[str, str]:
    """Valida los artefactos de las etapas anteriores a stage.

    Returns:
        Hashes de las salidas de las etapas anteriores ("etapa/nombre" → sha256).

    Raises:
        MissingArtifactError: falta un artefacto o uno de sus ficheros.
        StaleArtifactError:   config o contenido distintos de los registrados.
    """
    wd = wd or Workdir(cfg.work_dir)
    consumed: dict[str, str] = {}
    for up in STAGE_ORDER[: STAGE_ORDER.index(stage)]:
        consumed.update(_validate(cfg, wd, up))
    return consumed


def stage_status(cfg: PipelineConfig) -> dict[str, str]:
    """Estado de cada etapa: ok | missing | stale.

    Una etapa cuyo artefacto es válido pero depende de otra no válida
    cuenta como stale.
    """
    wd = Workdir(cfg.work_dir)
    status: dict[str, str] = {}
    upstream_ok = True
    for stage in STAGE_ORDER:
        try:
            _validate(cfg, wd, stage)
            status[stage.value] = "ok" if upstream_ok else "stale"
        except MissingArtifactError:
            status[stage.value] = "missing"
        except StaleArtifactError:
            status[stage.value] = "stale"
        upstream_ok = upstream_ok and status[stage.value] == "ok"
    return status


# ═══════════════════════════════════════════
#  Carga de salidas de etapas anteriores
# ═══════════════════════════════════════════

class _Context:
    """Acceso perezoso a las salidas de las etapas ya ejecutadas."""

    def __init__(self, cfg: PipelineConfig, wd: Workdir) -> None:
        self.cfg = cfg
        self.wd = wd
        self._cache: dict[str, Any] = {}

    def _memo(self, key: str, load: Callable[[], Any]) -> Any:
        if key not in self._cache:
            self._cache[key] = load()
        return self._cache[key]

    def inputs(self) -> CorpusHandle:
        return self._memo("x", lambda: ingest_jsonl(self.wd.path(PipelineStage.INGEST, "x.jsonl"), Side.INPUT))

    def outputs(self) -> CorpusHandle:
        return self._memo("y", lambda: ingest_jsonl(self.wd.path(PipelineStage.INGEST, "y.jsonl"), Side.OUTPUT))

    def seed(self) -> list[SeedExample]:
        return self._memo(
            "seed", lambda: load_seed_jsonl(self.wd.path(PipelineStage.INGEST, "seed.jsonl"), self.cfg.task)
        )

    def biencoder(self) -> tuple[encoder.BiencoderModel, encoder.PrefilterModel]:
        return self._memo("bi", lambda: load_biencoder(self.wd.path(PipelineStage.TRAIN, "biencoder.pmbi")))

    def stores(self) -> tuple[VectorStore, VectorStore]:
        return self._memo("stores", lambda: (
            load_vectors(self.wd.path(PipelineStage.EMBED, "x.pmv")),
            load_vectors(self.wd.path(PipelineStage.EMBED, "y.pmv")),
        ))

    def candidates(self) -> list[PairCandidate]:
        return self._memo("cands", lambda: load_candidates(self.wd.path(PipelineStage.MINE, "candidates.jsonl")))

    def feature_source(self) -> crossfilter.StoreFeatureSource:
        x_store, y_store = self.stores()
        return crossfilter.StoreFeatureSource(self.inputs(), self.outputs(), x_store, y_store)


def _counters(records_in: int, records_out: int, filtered: int = 0, degenerate: int = 0,
              **extra: int) -> dict[str, int]:
    if records_out + filtered + degenerate != records_in:
        logger.warning(
            "Contadores no conservados: in=%d out=%d filtered=%d degenerate=%d",
            records_in, records_out, filtered, degenerate,
        )
    return dict(records_in=records_in, records_out=records_out, filtered=filtered,
                degenerate=degenerate, **extra)


class _StageResult:
    def __init__(self, outputs: dict[str, str], counters: dict[str, int], info: dict[str, Any] | None = None,
                 input_hashes: dict[str, str] | None = None) -> None:
        self.outputs = outputs
        self.counters = counters
        self.info = info or {}
        self.input_hashes = input_hashes


# ═══════════════════════════════════════════
#  Etapas
# ═══════════════════════════════════════════

def _rc_outputs(passages: CorpusHandle, cfg: PipelineConfig) -> CorpusHandle:
    """Pasajes con answer_span válido se conservan; el resto se trocea en spans."""
    records: list[Record] = []
    for r in passages.records:
        if span_is_valid(r):
            meta = dict(r.meta, source_doc_id=str(r.id))
            records.append(r.model_copy(update={"id": child_id(r.id, 0), "meta": meta}))
        else:
            records.extend(split_outputs(r, Task.READING_COMPREHENSION, cfg.spotter))
    return make_corpus(records, Side.OUTPUT)


def _run_ingest(ctx: _Context) -> _StageResult:
    cfg, wd = ctx.cfg, ctx.wd
    if not cfg.x_corpus:
        raise ConfigError("x_corpus no configurado")
    if not cfg.seed_path:
        raise ConfigError("seed_path no configurado")
    sources = _source_hashes(cfg)

    raw_x = ingest_jsonl(cfg.x_corpus, Side.INPUT)
    dropped = 0
    if cfg.task == Task.SUMMARIZATION:
        inputs, dropped = filter_min_sentences(raw_x, cfg.min_doc_sentences)
        if cfg.y_corpus:
            outputs = ingest_jsonl(cfg.y_corpus, Side.OUTPUT)
        else:
            outputs = split_corpus(inputs, Task.SUMMARIZATION)
    else:
        inputs = raw_x
        if not cfg.y_corpus:
            raise ConfigError("y_corpus (pasajes) es obligatorio en reading_comprehension")
        outputs = _rc_outputs(ingest_jsonl(cfg.y_corpus, Side.OUTPUT), cfg)
    seed = load_seed_jsonl(cfg.seed_path, cfg.task)

    export_jsonl(inputs, wd.path(PipelineStage.INGEST, "x.jsonl"))
    export_jsonl(outputs, wd.path(PipelineStage.INGEST, "y.jsonl"))
    export_seed_jsonl(seed, wd.path(PipelineStage.INGEST, "seed.jsonl"))
    counters = _counters(
        len(raw_x) + raw_x.skipped, len(inputs), dropped, raw_x.skipped,
        y_records=len(outputs), seed_examples=len(seed),
    )
    return _StageResult(
        {"x": "x.jsonl", "y": "y.jsonl", "seed": "seed.jsonl"}, counters, input_hashes=sources,
    )


def _run_train(ctx: _Context) -> _StageResult:
    cfg = ctx.cfg
    seed = ctx.seed()
    train_cfg = cfg.biencoder.model_copy(
        update={"rng_seed": derived_seed(cfg.rng_seed, cfg.biencoder.rng_seed)}
    )
    prefilter_corpus = ctx.inputs() if cfg.task == Task.READING_COMPREHENSION else ctx.outputs()
    model, pre = encoder.train(
        seed, ctx.outputs(), train_cfg,
        task=cfg.task, prefilter_corpus=prefilter_corpus, spotter=cfg.spotter,
    )
    path = ctx.wd.path(PipelineStage.TRAIN, "biencoder.pmbi")
    save_biencoder(model, pre, path, train_cfg.model_dump(mode="json"))
    info = {
        "steps": len(model.loss_trace),
        "final_loss": model.loss_trace[-1] if model.loss_trace else None,
    }
    return _StageResult(
        {"biencoder": path.name, "biencoder_meta": sidecar_path(path).name},
        _counters(len(seed), len(seed)),
        info,
    )


def _run_embed(ctx: _Context) -> _StageResult:
    cfg = ctx.cfg
    model, pre = ctx.biencoder()
    x_store, x_skipped = encoder.embed_corpus(model, ctx.inputs(), cfg.task, cfg.workers)
    y_store, y_skipped = encoder.embed_corpus(model, ctx.outputs(), cfg.task, cfg.workers)

    side = "x" if cfg.task == Task.READING_COMPREHENSION else "y"
    target = x_store if side == "x" else y_store
    scores = encoder.prefilter_scores(pre, target.vectors)
    tau, mask = encoder.retention_threshold(scores, cfg.retention)
    kept = target.take([int(i) for i in target.ids[mask]])
    if side == "x":
        x_store = kept
    else:
        y_store = kept
    removed = len(target) - len(kept)
    achieved = len(kept) / len(target) if len(target) else 0.0
    logger.info("Prefiltro sobre %s: τ=%.4f, conserva %d/%d (%.1f%%)",
                side, tau, len(kept), len(target), 100 * achieved)

    save_vectors(x_store, ctx.wd.path(PipelineStage.EMBED, "x.pmv"))
    save_vectors(y_store, ctx.wd.path(PipelineStage.EMBED, "y.pmv"))
    total_in = len(ctx.inputs()) + len(ctx.outputs())
    counters = _counters(
        total_in, len(x_store) + len(y_store), removed, len(x_skipped) + len(y_skipped),
    )
    info = {"prefilter_side": side, "threshold": tau, "retention_target": cfg.retention,
            "retention_achieved": achieved}
    return _StageResult({"x": "x.pmv", "y": "y.pmv"}, counters, info)


def _shards(ctx: _Context, x_store: VectorStore, y_store: VectorStore) -> list[tuple[str, list[int], list[int]]]:
    """(clave, ids x, ids y) de cada shard con ambos lados no vacíos."""
    cfg = ctx.cfg
    if cfg.task == Task.READING_COMPREHENSION:
        return [("_all", [int(i) for i in x_store.ids], [int(i) for i in y_store.ids])]
    gran = cfg.shard_granularity
    xs = {s.key_value: [i for i in s.record_ids if i in x_store]
          for s in shard_by_key(ctx.inputs(), cfg.shard_key, gran)}
    ys = {s.key_value: [i for i in s.record_ids if i in y_store]
          for s in shard_by_key(ctx.outputs(), cfg.shard_key, gran)}
    return [(k, xs[k], ys[k]) for k in sorted(set(xs) & set(ys)) if xs[k] and ys[k]]


def _build_pair(cfg: PipelineConfig, store: VectorStore) -> ExactIndex | IvfIndex:
    nlist = min(cfg.nlist, len(store))
    return build(store, cfg.index_kind, nlist, cfg.rng_seed, cfg.workers)


def _run_index(ctx: _Context) -> _StageResult:
    cfg, wd = ctx.cfg, ctx.wd
    x_store, y_store = ctx.stores()
    shards = _shards(ctx, x_store, y_store)
    outputs: dict[str, str] = {}
    shard_info = []
    indexed = 0
    for j, (key, x_ids, y_ids) in enumerate(shards):
        name = f"shard_{j:04d}"
        (wd.stage_dir(PipelineStage.INDEX) / name).mkdir(parents=True, exist_ok=True)
        entry: dict[str, Any] = {"key": key, "dir": name}
        for side, store in (("x", x_store.take(x_ids)), ("y", y_store.take(y_ids))):
            index = _build_pair(cfg, store)
            for p in save_index(index, wd.path(PipelineStage.INDEX, f"{name}/{side}")):
                outputs[f"{name}/{p.name}"] = f"{name}/{p.name}"
            entry[f"{side}_count"] = len(store)
            entry[f"{side}_nlist"] = index.nlist if isinstance(index, IvfIndex) else None
        indexed += len(x_ids) + len(y_ids)
        shard_info.append(entry)
    if not shards:
        logger.warning("Ningún shard tiene entradas y salidas: no hay nada que indexar")
    total = len(x_store) + len(y_store)
    logger.info("Índices: %d shards, %d vectores indexados", len(shards), indexed)
    return _StageResult(outputs, _counters(total, indexed, total - indexed), {"shards": shard_info})


def _mine_shard(ctx: _Context, entry: dict[str, Any], overlap: OverlapFilter) -> tuple[list[PairCandidate], Counter[str]]:
    cfg, wd = ctx.cfg, ctx.wd
    x_index = load_index(wd.path(PipelineStage.INDEX, f"{entry['dir']}/x"), cfg.rng_seed, 1)
    y_index = load_index(wd.path(PipelineStage.INDEX, f"{entry['dir']}/y"), cfg.rng_seed, 1)
    nprobe = cfg.margin.nprobe
    for index in (x_index, y_index):
        if isinstance(index, IvfIndex):
            nprobe = min(nprobe, index.nlist)
    margin_cfg = cfg.margin.model_copy(update={"max_candidates": None, "nprobe": nprobe})
    counters: Counter[str] = Counter()
    found = mine(x_index.store, y_index.store, x_index, y_index, margin_cfg, overlap, counters)
    return found, counters


def _run_mine(ctx: _Context) -> _StageResult:
    cfg = ctx.cfg
    art = ctx.wd.read_artifact(PipelineStage.INDEX)
    shards = art.info.get("shards", []) if art else []
    overlap = overlap_filter_for(cfg.task, ctx.inputs(), ctx.outputs())

    if cfg.workers > 1 and len(shards) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda e: _mine_shard(ctx, e, overlap), shards))
    else:
        results = [_mine_shard(ctx, e, overlap) for e in shards]

    stats: Counter[str] = Counter()
    candidates: list[PairCandidate] = []
    for found, counters in results:
        candidates.extend(found)
        stats.update(counters)
    candidates.sort(key=lambda c: (-c.margin, c.x_id, c.y_id))
    cap = cfg.margin.max_candidates
    if cap is not None and len(candidates) > cap:
        extra = len(candidates) - cap
        stats["filtered_cap"] += extra
        stats["filtered"] += extra
        stats["records_out"] -= extra
        candidates = candidates[:cap]

    save_candidates(candidates, ctx.wd.path(PipelineStage.MINE, "candidates.jsonl"))
    counters_out = _counters(
        stats["records_in"], len(candidates), stats["filtered"], stats["degenerate_margin"],
        filtered_overlap=stats["filtered_overlap"],
        filtered_fanout=stats["filtered_fanout"],
        filtered_cap=stats["filtered_cap"],
    )
    return _StageResult({"candidates": "candidates.jsonl"}, counters_out, {"shards": len(shards)})


def _run_train_cross(ctx: _Context) -> _StageResult:
    cfg = ctx.cfg
    seed = ctx.seed()
    cross_cfg = cfg.cross.model_copy(update={"rng_seed": derived_seed(cfg.rng_seed, cfg.cross.rng_seed)})
    model_bi, _ = ctx.biencoder()
    stats: Counter[str] = Counter()

    if cfg.task == Task.READING_COMPREHENSION:
        negatives = crossfilter.sample_binary_negatives(ctx.candidates(), len(seed), cross_cfg.rng_seed)
        model = crossfilter.train_binary(
            seed, negatives, cross_cfg, source=ctx.feature_source(), bimodel=model_bi, task=cfg.task,
        )
        counters = _counters(len(seed), len(seed), negatives=len(negatives))
    else:
        _, y_store = ctx.stores()
        retrieval = crossfilter.Retrieval(model_bi, ExactIndex(y_store, cfg.workers), ctx.outputs(), cfg.task)
        triples = crossfilter.mine_hard_negatives(seed, retrieval, cross_cfg.negatives_per_doc, stats)
        model = crossfilter.train_pairwise(triples, retrieval, cross_cfg)
        without = stats["docs_without_negatives"]
        counters = _counters(len(seed), len(seed) - without, 0, without, triples=len(triples))

    path = ctx.wd.path(PipelineStage.TRAIN_CROSS, "cross.pmcx")
    save_crossmodel(model, path, cross_cfg.model_dump(mode="json"))
    info = {"mode": model.mode.value,
            "final_loss": model.loss_trace[-1] if model.loss_trace else None}
    return _StageResult({"cross": path.name, "cross_meta": sidecar_path(path).name}, counters, info)


def _run_filter(ctx: _Context) -> _StageResult:
    cfg = ctx.cfg
    candidates = ctx.candidates()
    source = ctx.feature_source()
    stats: Counter[str] = Counter()
    if cfg.cross_scorer == "mlp":
        model = load_crossmodel(ctx.wd.path(PipelineStage.TRAIN_CROSS, "cross.pmcx"))
        kept = crossfilter.rerank(model, candidates, source, cfg.final_top_n, cfg.task, cfg.workers)
    else:
        if cfg.cross_scorer == "file":
            if not cfg.cross_scores_path:
                raise ConfigError("cross_scorer=file exige cross_scores_path")
            scores = import_scores_jsonl(cfg.cross_scores_path)
        else:
            scores = HttpPairScorer()(pair_texts(candidates, source))
        kept = crossfilter.rerank_external(candidates, scores, cfg.final_top_n, stats)

    save_candidates(kept, ctx.wd.path(PipelineStage.FILTER, "reranked.jsonl"))
    unscored = stats["unscored"]
    counters = _counters(len(candidates), len(kept), len(candidates) - len(kept) - unscored, unscored)
    return _StageResult({"reranked": "reranked.jsonl"}, counters, {"scorer": cfg.cross_scorer})


def _manifest(ctx: _Context, size: int) -> dict[str, Any]:
    stages = {}
    for stage in STAGE_ORDER[: STAGE_ORDER.index(PipelineStage.EXPORT)]:
        art = ctx.wd.read_artifact(stage)
        if art is not None:
            stages[stage.value] = {"counters": art.counters, "info": art.info}
    return {
        "config_hash": config_hash(ctx.cfg),
        "task": ctx.cfg.task.value,
        "final_top_n": ctx.cfg.final_top_n,
        "size": size,
        "stages": stages,
    }


def _run_export(ctx: _Context) -> _StageResult:
    cfg, wd = ctx.cfg, ctx.wd
    reranked = load_candidates(wd.path(PipelineStage.FILTER, "reranked.jsonl"))
    ds = dataset.build_dataset(reranked, ctx.inputs(), ctx.outputs(), cfg.task, cfg.final_top_n)
    ds.manifest = _manifest(ctx, len(ds.pairs))
    dataset.export(ds, wd.path(PipelineStage.EXPORT, "mined.jsonl"))
    write_json(wd.path(PipelineStage.EXPORT, "manifest.json"), ds.manifest)
    outputs = {"mined": "mined.jsonl", "manifest": "manifest.json"}

    ablation = dataset.build_dataset(ctx.candidates(), ctx.inputs(), ctx.outputs(), cfg.task, cfg.final_top_n)
    if ablation.pairs:
        dataset.export(ablation, wd.path(PipelineStage.EXPORT, "biencoder.jsonl"))
        outputs["biencoder"] = "biencoder.jsonl"
    return _StageResult(outputs, _counters(len(reranked), len(ds.pairs), len(reranked) - len(ds.pairs)))


_RUNNERS: dict[PipelineStage, Callable[[_Context], _StageResult]] = {
    PipelineStage.INGEST: _run_ingest,
    PipelineStage.TRAIN: _run_train,
    PipelineStage.EMBED: _run_embed,
    PipelineStage.INDEX: _run_index,
    PipelineStage.MINE: _run_mine,
    PipelineStage.TRAIN_CROSS: _run_train_cross,
    PipelineStage.FILTER: _run_filter,
    PipelineStage.EXPORT: _run_export,
}


# ═══════════════════════════════════════════
#  API
# ═══════════════════════════════════════════

def run_stage(cfg: PipelineConfig, stage: PipelineStage, _ctx: _Context | None = None) -> StageArtifact:
    """Ejecuta una etapa y persiste su StageArtifact.

    Raises:
        MissingArtifactError / StaleArtifactError si las etapas anteriores
        no están completas o no corresponden al config.
    """
    wd = Workdir(cfg.work_dir)
    consumed = check_upstream(cfg, stage, wd)
    wd.stage_dir(stage).mkdir(parents=True, exist_ok=True)
    logger.info("▶ Etapa %s", stage.value)

    ctx = _ctx or _Context(cfg, wd)
    result = _RUNNERS[stage](ctx)
    output_hashes = {name: file_sha256(wd.path(stage, rel)) for name, rel in result.outputs.items()}
    artifact = StageArtifact(
        stage=stage,
        config_hash=stage_config_hash(cfg, stage),
        input_hashes=result.input_hashes if result.input_hashes is not None else consumed,
        outputs=result.outputs,
        output_hashes=output_hashes,
        counters=result.counters,
        info=result.info,
    )
    wd.write_artifact(artifact)
    logger.info(
        "✔ Etapa %s: in=%d out=%d filtered=%d degenerate=%d",
        stage.value, artifact.counters.get("records_in", 0), artifact.counters.get("records_out", 0),
        artifact.counters.get("filtered", 0), artifact.counters.get("degenerate", 0),
    )
    return artifact


def run_all(cfg: PipelineConfig) -> list[StageArtifact]:
    """Todas las etapas en orden, compartiendo en memoria lo ya cargado."""
    ctx = _Context(cfg, Workdir(cfg.work_dir))
    return [run_stage(cfg, stage, ctx) for stage in STAGE_ORDER]


def load_dataset(cfg: PipelineConfig, source: str = "full") -> MinedDataset:
    """Dataset exportado: source=full (cascada) o biencoder (ablación)."""
    wd = Workdir(cfg.work_dir)
    name = {"full": "mined.jsonl", "biencoder": "biencoder.jsonl"}.get(source)
    if name is None:
        raise ConfigError(f"source desconocido: {source}")
    path = wd.path(PipelineStage.EXPORT, name)
    if not path.is_file():
        raise MissingArtifactError(f"{PipelineStage.EXPORT.value}/{name}")
    ds = dataset.parse(path)
    manifest = wd.path(PipelineStage.EXPORT, "manifest.json")
    if manifest.is_file():
        ds.manifest = read_json(manifest)
    return ds


def seed_examples(cfg: PipelineConfig) -> list[SeedExample]:
    wd = Workdir(cfg.work_dir)
    path = wd.path(PipelineStage.INGEST, "seed.jsonl")
    if not path.is_file():
        raise MissingArtifactError(f"{PipelineStage.INGEST.value}/seed.jsonl")
    return load_seed_jsonl(path, cfg.task)
