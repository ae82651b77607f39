"""Normalización de texto para almacenamiento, comparación y tokenización."""

import re
import unicodedata

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"\w+")


def normalize_record_text(text: str) -> str:
    """Normalización de almacenamiento: NFC + espacios colapsados.

    Conserva mayúsculas: el texto guardado mantiene su forma original.
    """
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip()


def normalize_text(text: str) -> str:
    """Normalización de comparación: NFC, case-fold y espacios simples.

    Usada por el filtro de solape literal y como base de la tokenización.
    """
    folded = unicodedata.normalize("NFC", text).casefold()
    return _WS.sub(" ", folded).strip()


def tokenize(text: str) -> list[str]:
    """Tokens de palabra sobre el texto normalizado (sin puntuación)."""
    return _TOKEN.findall(normalize_text(text))
