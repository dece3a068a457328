"""
risklab county risk toolkit.

Deutsch:
    risklab Werkzeuge zur Risikoklassifikation von Landkreisen.
"""

from __future__ import annotations

__all__ = ["__version__"]

__version__ = "0.1.0"
