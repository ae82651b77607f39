"""
Adaptador del directorio de trabajo: escrituras atómicas y hashes de contenido.

Toda salida de etapa se escribe a un fichero temporal en la misma carpeta y
se renombra (os.replace), así un lector concurrente nunca ve un fichero a
medias. Se asume un único escritor por directorio de trabajo.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable

from app.core.logging import get_logger

logger = get_logger(__name__)

_CHUNK = 1 << 20


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Escribe data en path vía temp + rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_lines(path: Path, lines: Iterable[str]) -> None:
    """Escribe líneas terminadas en LF (formato JSONL)."""
    atomic_write_text(path, "".join(f"{line}\n" for line in lines))


def dumps_line(obj: Any) -> str:
    """Una línea JSONL estable (orden de claves del dict, UTF-8 sin escapar)."""
    return json.dumps(obj, ensure_ascii=False)


def write_json(path: Path, obj: Any) -> None:
    atomic_write_text(path, json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> Any:
    return json.loads(path.read_text("utf-8"))


def file_sha256(path: Path) -> str:
    """sha256 hex del contenido del fichero."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            chunk = f.read(_CHUNK)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()
