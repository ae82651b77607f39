"""Logging centralizado del proyecto."""

import logging

_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def get_logger(name: str) -> logging.Logger:
    """Devuelve un logger estándar para el módulo dado."""
    return logging.getLogger(name)


def setup_logging(level: str | int = "INFO") -> None:
    """Configura el logging raíz (CLI y servicio comparten formato)."""
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    logging.basicConfig(level=level, format=_FORMAT, datefmt="%H:%M:%S")
