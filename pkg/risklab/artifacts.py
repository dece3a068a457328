"""
Atomic artifact writing and digests.

A payload is written to ``<name>.partial`` and renamed into place, so a crash never
leaves a truncated file under the final name.

Deutsch:
    Atomares Schreiben von Artefakten und SHA-256-Prüfsummen.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Callable, Mapping

import pandas as pd

from .errors import ComputeError

PARTIAL_SUFFIX = ".partial"


class ReportError(ComputeError):
    """Raised when an artifact cannot be written. / Artefakt nicht schreibbar."""


def partial_path(path: Path) -> Path:
    return path.with_name(path.name + PARTIAL_SUFFIX)


def write_atomic(path: Path, writer: Callable[[Path], None]) -> Path:
    """Run ``writer`` against the ``.partial`` sibling of ``path``, then rename it."""

    path = Path(path)
    tmp_path = partial_path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(tmp_path)
        tmp_path.replace(path)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path


def dumps_json(payload: Mapping[str, Any]) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json_atomic(path: Path, payload: Mapping[str, Any]) -> Path:
    text = dumps_json(payload)
    return write_atomic(path, lambda target: target.write_text(text, encoding="utf-8"))


def write_csv_atomic(path: Path, frame: pd.DataFrame) -> Path:
    return write_atomic(
        path,
        lambda target: frame.to_csv(target, index=False, lineterminator="\n", float_format="%.17g"),
    )


def read_json(path: Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path} is not valid JSON: {exc}") from exc


def sha256_of_path(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()
