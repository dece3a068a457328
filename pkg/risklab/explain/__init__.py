"""
Feature attribution for fitted forests.

Deutsch:
    Merkmalsattribution für trainierte Random Forests.
"""

from __future__ import annotations

from ..errors import ComputeError


class ExplainError(ComputeError):
    """Raised when attributions cannot be computed. / Attribution nicht berechenbar."""
