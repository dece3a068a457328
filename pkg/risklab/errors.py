"""
Exception hierarchy shared by all pipeline stages.

Deutsch:
    Gemeinsame Fehlerklassen aller Pipeline-Stufen.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_COMPUTE = 4


class RiskLabError(Exception):
    """Base class of all risklab failures. / Basisklasse aller risklab-Fehler."""

    exit_code = EXIT_COMPUTE


class ConfigError(RiskLabError):
    """Raised for invalid configuration. / Ungültige Konfiguration."""

    exit_code = EXIT_CONFIG


class DataError(RiskLabError):
    """Raised for unusable input data. / Unbrauchbare Eingabedaten."""

    exit_code = EXIT_DATA


class ComputeError(RiskLabError):
    """Raised when a numerical stage fails. / Fehler in einer Rechenstufe."""

    exit_code = EXIT_COMPUTE
