from __future__ import annotations

import logging

import numpy as np
import pytest

from risklab.logging_conf import configure_logging, resolve_level
from risklab.parallel import map_ordered
from risklab.randomness import STAGE_CV, STAGE_SPLIT, derive_rng, derive_seed


def _draw(index: int) -> float:
    return float(derive_rng(5, STAGE_CV, index).random())


def test_map_ordered_keeps_input_order() -> None:
    serial = map_ordered(_draw, range(20), n_jobs=1)
    threaded = map_ordered(_draw, range(20), n_jobs=4)

    assert serial == threaded
    assert serial == [_draw(index) for index in range(20)]


def test_derived_streams_are_reproducible_and_distinct() -> None:
    first = derive_rng(3, STAGE_SPLIT, 0).random(4)
    again = derive_rng(3, STAGE_SPLIT, 0).random(4)
    other_unit = derive_rng(3, STAGE_SPLIT, 1).random(4)
    other_stage = derive_rng(3, STAGE_CV, 0).random(4)

    assert np.array_equal(first, again)
    assert not np.array_equal(first, other_unit)
    assert not np.array_equal(first, other_stage)
    assert derive_seed(3, STAGE_SPLIT) == derive_seed(3, STAGE_SPLIT)
    assert derive_seed(3, STAGE_SPLIT) != derive_seed(4, STAGE_SPLIT)


def test_log_level_from_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("RISKLAB_LOGLEVEL", "warning")
    assert resolve_level("DEBUG") == logging.WARNING

    monkeypatch.setenv("RISKLAB_LOGLEVEL", "chatty")
    assert resolve_level("DEBUG") == logging.DEBUG
    assert resolve_level("chatty") == logging.INFO


def test_third_party_loggers_stay_quiet(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("RISKLAB_LOGLEVEL", raising=False)
    root = logging.getLogger()
    numba_logger = logging.getLogger("numba")
    previous = (root.level, numba_logger.level)
    try:
        assert configure_logging("DEBUG") == logging.DEBUG
        assert root.level == logging.DEBUG
        assert numba_logger.level == logging.WARNING
    finally:
        root.setLevel(previous[0])
        numba_logger.setLevel(previous[1])
