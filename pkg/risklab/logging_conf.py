"""
Logging configuration helpers.

Deutsch:
    Logging-Konfiguration.
"""

from __future__ import annotations

import logging
import os

LOG_FORMAT = "%(asctime)s | %(levelname)-7s | %(name)s | %(message)s"
LEVEL_ENV = "RISKLAB_LOGLEVEL"
# JIT compilation and font lookup flood DEBUG output otherwise.
NOISY_LOGGERS = ("numba", "matplotlib")


def resolve_level(default_level: str = "INFO") -> int:
    """``RISKLAB_LOGLEVEL`` when it names a level, else ``default_level``, else INFO."""

    for candidate in (os.getenv(LEVEL_ENV, ""), default_level):
        level = logging.getLevelName(candidate.strip().upper())
        if isinstance(level, int):
            return level
    return logging.INFO


def configure_logging(default_level: str = "INFO") -> int:
    """
    Configure the root logger once and return the effective level.

    Deutsch:
        Setzt das Root-Logging auf; Drittbibliotheken bleiben auf WARNING.
    """

    level = resolve_level(default_level)
    root = logging.getLogger()
    if root.handlers:
        root.setLevel(level)
    else:
        logging.basicConfig(level=level, format=LOG_FORMAT)
    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(max(level, logging.WARNING))
    return level
