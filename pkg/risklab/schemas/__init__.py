"""
JSON schemas bundled with risklab.

Deutsch:
    Mitgelieferte JSON-Schemata für Konfiguration, Stufen-Artefakte und Bericht.
"""

from __future__ import annotations

__all__ = ["load_schema", "schema_errors"]

from functools import lru_cache
from importlib import resources
from json import load
from typing import Any, Dict, List

from jsonschema import Draft7Validator


def load_schema(name: str) -> Dict[str, Any]:
    """
    Load a JSON schema from the local schema package.

    Deutsch:
        Lädt ein JSON-Schema aus dem Schema-Paket.
    """

    with resources.files(__name__).joinpath(name).open("r", encoding="utf-8") as fh:
        return load(fh)


@lru_cache(maxsize=None)
def _validator(name: str) -> Draft7Validator:
    schema = load_schema(name)
    Draft7Validator.check_schema(schema)
    return Draft7Validator(schema)


def schema_errors(payload: Any, name: str) -> List[str]:
    """Draft-7 violations of ``payload`` as ``path -> message`` strings, sorted by path."""

    errors = sorted(_validator(name).iter_errors(payload), key=lambda err: [str(part) for part in err.path])
    return [f"{'.'.join(str(part) for part in error.path) or '<root>'} -> {error.message}" for error in errors]
