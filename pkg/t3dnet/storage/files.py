"""
Атомарная запись файлов (tmp file + rename).
"""

import csv
import io
import json
import os
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

from pydantic import BaseModel

from t3dnet.core.logging import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write bytes so readers see either the old file or the complete new one."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(path.name + ".tmp")
    with open(temp_path, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(temp_path, path)
    logger.debug("File written", path=str(path), bytes=len(payload))
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def render_csv(columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """CSV text with `\\n` line endings; cells with commas or quotes are quoted."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buffer.getvalue()


def atomic_write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    return atomic_write_text(path, render_csv(columns, rows))


def atomic_write_json(path: PathLike, data: Union[BaseModel, dict, list]) -> Path:
    if isinstance(data, BaseModel):
        text = data.model_dump_json(indent=2)
    else:
        text = json.dumps(data, indent=2, sort_keys=True)
    return atomic_write_text(path, text + "\n")


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
