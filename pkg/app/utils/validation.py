"""
Utilidades de validación numérica compartidas entre servicios y adaptadores.
"""

import numpy as np

from app.core.errors import NumericError


def is_power_of_two(n: int) -> bool:
    return n > 0 and not (n & (n - 1))


def check_finite(name: str, arr: np.ndarray | float) -> None:
    """Lanza NumericError nombrando el bloque si contiene NaN/Inf."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"valor no finito en '{name}'")


def unit_row_deviation(vectors: np.ndarray) -> np.ndarray:
    """|‖fila‖₂ − 1| por fila."""
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    return np.abs(norms - 1.0)


def renormalize_rows(vectors: np.ndarray, tol: float) -> tuple[np.ndarray, int]:
    """Renormaliza filas cuya norma se desvía más de tol.

    Devuelve (vectores, nº de filas corregidas). Filas de norma nula se
    consideran degeneradas y lanzan NumericError.
    """
    dev = unit_row_deviation(vectors)
    bad = np.nonzero(dev > tol)[0]
    if bad.size == 0:
        return vectors, 0
    out = vectors.astype(np.float64, copy=True)
    norms = np.linalg.norm(out[bad], axis=1)
    if np.any(norms < 1e-12):
        raise NumericError(f"{int(np.sum(norms < 1e-12))} vector(es) de norma nula")
    out[bad] /= norms[:, None]
    return out.astype(vectors.dtype), int(bad.size)
