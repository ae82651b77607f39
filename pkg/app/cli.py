"""
Línea de comandos del pipeline de minado.

  python -m app.cli [flags] <comando> [opciones]

Comandos de etapa: ingest, train-biencoder, embed, index, mine, train-cross,
filter, export, run-all. Utilidades: evaluate, synth, report, augment.

Flags globales (antes o después del comando):
  --config PATH          fichero clave=valor (por defecto MINER_CONFIG)
  --workdir PATH         directorio de trabajo (por defecto MINER_WORKDIR)
  --seed U64             rng_seed global
  --stage-override K=V   sobrescribe un campo del config (repetible)
  --log-level NIVEL

Códigos de salida: 0 ok, 1 E/S, 2 config, 3 artefacto ausente/obsoleto,
4 fallo numérico.
"""

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from app.adapters.workdir import atomic_write_text, write_json
from app.core.config import MINER_CONFIG, MINER_LOG_LEVEL
from app.core.errors import ConfigError, MiningError
from app.core.logging import get_logger, setup_logging
from app.core.settings import load_config
from app.models.pipeline import PipelineConfig, PipelineStage
from app.services import dataset, evalharness, pipeline
from app.services.miner import load_candidates

logger = get_logger(__name__)

STAGE_COMMANDS: dict[str, PipelineStage] = {
    "ingest": PipelineStage.INGEST,
    "train-biencoder": PipelineStage.TRAIN,
    "embed": PipelineStage.EMBED,
    "index": PipelineStage.INDEX,
    "mine": PipelineStage.MINE,
    "train-cross": PipelineStage.TRAIN_CROSS,
    "filter": PipelineStage.FILTER,
    "export": PipelineStage.EXPORT,
}

_SUPPRESS = argparse.SUPPRESS

# dim del bi-encoder en los configs de synth; el ruido del coseno con la tabla
# aleatoria es ≈ 1/√dim.
SYNTH_DIMS = {"toy": 64}
SYNTH_DIM_DEFAULT = 1024

ID_LIMIT_NOTE = (
    "Ids: los documentos (resumen) y pasajes (RC) del corpus de salidas deben tener "
    "id < 2^44; cada salida derivada usa (id << 20) | j."
)


def _int_list(raw: str) -> list[int]:
    try:
        return [int(p) for p in raw.split(",") if p.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"lista de enteros inválida: {raw}") from e


def _global_flags(parser: argparse.ArgumentParser, default: Any) -> None:
    parser.add_argument("--config", default=default)
    parser.add_argument("--workdir", default=default)
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--stage-override", action="append", dest="overrides", default=default,
                        metavar="KEY=VALUE")
    parser.add_argument("--log-level", default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairmine", description="Minado de pares con bi-encoder + cross-encoder", epilog=ID_LIMIT_NOTE,
    )
    _global_flags(parser, None)
    # Los subcomandos aceptan los mismos flags; SUPPRESS evita pisar los del nivel superior.
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, _SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGE_COMMANDS:
        sub.add_parser(
            name, parents=[common], help=f"ejecuta la etapa {STAGE_COMMANDS[name].value}",
            epilog=ID_LIMIT_NOTE if name == "ingest" else None,
        )
    sub.add_parser("run-all", parents=[common], help="ejecuta todas las etapas en orden")

    ev = sub.add_parser("evaluate", parents=[common], help="recall@k / precision@N frente a pares gold")
    ev.add_argument("--gold", required=True, help="gold.json {x_id: y_id}")
    ev.add_argument("--source", choices=["full", "biencoder", "candidates"], default="full")
    ev.add_argument("--ks", type=_int_list, default=list(dataset.DEFAULT_KS))
    ev.add_argument("--ns", type=_int_list, default=list(dataset.DEFAULT_NS))

    sy = sub.add_parser("synth", parents=[common], help="escribe un corpus sintético con pares plantados")
    sy.add_argument("--preset", choices=sorted(evalharness.PRESETS), default="toy")
    sy.add_argument("--out", required=True)
    sy.add_argument("--num-pairs", type=int)
    sy.add_argument("--distractor-count", type=int)
    sy.add_argument("--rng-seed", type=int)

    rp = sub.add_parser("report", parents=[common], help="informe de abstractividad (ROUGE) por etapa")
    rp.add_argument("--limit", type=int, default=None)
    rp.add_argument("--out", default=None)

    au = sub.add_parser("augment", parents=[common], help="seed + minados a múltiplos del seed set")
    au.add_argument("--multiples", type=_int_list, default=list(dataset.AUGMENT_MULTIPLES))
    au.add_argument("--out", required=True)
    return parser


def _config(args: argparse.Namespace) -> PipelineConfig:
    return load_config(
        args.config or MINER_CONFIG or None,
        args.overrides or [],
        work_dir=args.workdir,
        seed=args.seed,
    )


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True))


# ── Comandos ──────────────────────────────────────────────────────────────────

def _cmd_evaluate(args: argparse.Namespace, cfg: PipelineConfig) -> None:
    gold = evalharness.load_gold(args.gold)
    if args.source == "candidates":
        pairs: Sequence[Any] = load_candidates(
            pipeline.Workdir(cfg.work_dir).path(PipelineStage.MINE, "candidates.jsonl")
        )
    else:
        pairs = pipeline.load_dataset(cfg, args.source).pairs
    metrics = dataset.evaluate(pairs, gold, args.ks, args.ns)
    _print_json(metrics.as_floats())


def _cmd_synth(args: argparse.Namespace) -> None:
    overrides = {
        k: v for k, v in (
            ("num_pairs", args.num_pairs),
            ("distractor_count", args.distractor_count),
            ("rng_seed", args.rng_seed),
        ) if v is not None
    }
    try:
        spec = evalharness.PRESETS[args.preset](**overrides)
    except ValueError as e:
        raise ConfigError(f"preset inválido: {e}") from e
    data = evalharness.generate(spec)
    paths = evalharness.write_synthetic(data, args.out)
    config_path = Path(args.out) / "pipeline.env"
    atomic_write_text(
        config_path,
        "\n".join([
            "task=summarization",
            f"x_corpus={paths['x'].resolve()}",
            f"y_corpus={paths['y'].resolve()}",
            f"seed_path={paths['seed'].resolve()}",
            "min_doc_sentences=0",
            "retention=1.0",
            f"final_top_n={min(500, spec.num_pairs)}",
            "biencoder.num_buckets=16384",
            f"biencoder.dim={SYNTH_DIMS.get(args.preset, SYNTH_DIM_DEFAULT)}",
            "",
        ]),
    )
    _print_json({name: str(p) for name, p in paths.items()} | {"config": str(config_path)})


def _cmd_report(args: argparse.Namespace, cfg: PipelineConfig) -> None:
    pairs = list(pipeline.load_dataset(cfg, "full").pairs)
    try:
        pairs += pipeline.load_dataset(cfg, "biencoder").pairs
    except MiningError:
        logger.warning("Sin export de ablación bi-encoder: el informe solo cubre la cascada")
    report = evalharness.abstractiveness_report(pairs, pipeline.seed_examples(cfg), args.limit)
    payload = report.model_dump(mode="json", exclude={"stages": {"__all__": {"per_pair"}}})
    if args.out:
        write_json(Path(args.out), report.model_dump(mode="json"))
    _print_json(payload)


def _cmd_augment(args: argparse.Namespace, cfg: PipelineConfig) -> None:
    ds = pipeline.load_dataset(cfg, "full")
    sets = dataset.build_augmented(pipeline.seed_examples(cfg), ds, args.multiples)
    paths = dataset.write_augmented(sets, args.out)
    _print_json([str(p) for p in paths])


def run(args: argparse.Namespace) -> None:
    if args.command == "synth":
        _cmd_synth(args)
        return
    cfg = _config(args)
    if args.command in STAGE_COMMANDS:
        artifact = pipeline.run_stage(cfg, STAGE_COMMANDS[args.command])
        _print_json(artifact.counters)
    elif args.command == "run-all":
        artifacts = pipeline.run_all(cfg)
        _print_json({a.stage.value: a.counters for a in artifacts})
    elif args.command == "evaluate":
        _cmd_evaluate(args, cfg)
    elif args.command == "report":
        _cmd_report(args, cfg)
    elif args.command == "augment":
        _cmd_augment(args, cfg)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or MINER_LOG_LEVEL)
    try:
        run(args)
    except MiningError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        logger.error("Error de E/S: %s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
