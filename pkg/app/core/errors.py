"""
Jerarquía de errores del pipeline.

Cada error lleva el código de salida que usa la CLI:
  2 → configuración / datos de entrada inválidos
  3 → artefacto de una etapa previa ausente u obsoleto
  4 → fallo numérico (divergencia, embedding degenerado)
"""


class MiningError(Exception):
    """Error base del proyecto."""

    exit_code = 1


class ConfigError(MiningError):
    """Configuración o parámetro inválido."""

    exit_code = 2


class CorpusParseError(MiningError):
    """Línea JSONL malformada; el mensaje nombra el número de línea."""

    exit_code = 2

    def __init__(self, path: str, line_no: int, reason: str) -> None:
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class DimensionMismatchError(MiningError):
    """Dimensiones de consultas e índice no coinciden."""

    exit_code = 2


class VectorFileError(MiningError):
    """Fichero de vectores PMV1 inválido o truncado."""

    exit_code = 2


class CheckpointError(MiningError):
    """Checkpoint PMBI/PMCX inválido o truncado."""

    exit_code = 2


class MissingArtifactError(MiningError):
    """Falta el artefacto de una etapa previa."""

    exit_code = 3

    def __init__(self, artifact: str) -> None:
        super().__init__(f"artefacto ausente: {artifact}")
        self.artifact = artifact


class StaleArtifactError(MiningError):
    """El artefacto existe pero no corresponde a la configuración/entradas actuales."""

    exit_code = 3


class NumericError(MiningError):
    """Valor no finito o degenerado durante cómputo numérico."""

    exit_code = 4


class UnembeddableRecordError(NumericError):
    """Registro sin features: no se puede embeber."""


class UnknownRecordError(MiningError):
    """Un candidato referencia un id que no existe en su corpus o store."""

    exit_code = 2

    def __init__(self, side: str, record_id: int) -> None:
        super().__init__(f"id de registro desconocido ({side}): {record_id}")
        self.record_id = record_id
