from __future__ import annotations

import sys
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pytest

# Ensure local package is importable without installation.
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from risklab.models import CLIMATE_ZONES, CSV_HEADER  # noqa: E402

# (share of counties, positive rate, death rate, population density) per planted risk group
RISK_GROUPS = (
    (0.2, 0.090, 0.0040, 800.0),
    (0.4, 0.065, 0.0020, 300.0),
    (0.4, 0.035, 0.0010, 50.0),
)
STATES = ("TX", "OH", "CA")


def make_county_rows(n: int = 90, seed: int = 7) -> List[Dict[str, str]]:
    """
    Synthetic combined county table with three well separated rate groups.

    Population density is the only predictor that carries the group; every other
    predictor is independent noise.
    """

    rng = np.random.default_rng(seed)
    sizes = [int(round(share * n)) for share, _, _, _ in RISK_GROUPS]
    sizes[-1] = n - sum(sizes[:-1])
    rows: List[Dict[str, str]] = []
    index = 0
    for (_, positive, death, density), size in zip(RISK_GROUPS, sizes):
        for _ in range(size):
            population = int(rng.integers(20_000, 400_000))
            positive_rate = positive + rng.normal(0.0, 0.002)
            death_rate = death + rng.normal(0.0, 0.0001)
            cases = int(round(positive_rate * population))
            deaths = min(int(round(death_rate * population)), cases)
            row = {
                "fips": f"{48001 + 2 * index}",
                "county": f"County {index}",
                "state": STATES[index % len(STATES)],
                "population": str(population),
                "positive_cases": str(cases),
                "deaths": str(deaths),
                "longitude": f"{rng.uniform(-120.0, -75.0):.4f}",
                "latitude": f"{rng.uniform(28.0, 47.0):.4f}",
                "pct_rural": f"{rng.uniform(5.0, 95.0):.2f}",
                "climate_zone": CLIMATE_ZONES[int(rng.integers(len(CLIMATE_ZONES)))],
                "icu_beds_per_10k": f"{rng.uniform(0.0, 6.0):.3f}",
                "pop_density": f"{max(density + rng.normal(0.0, 0.06 * density), 1.0):.2f}",
            }
            for name, low, high in (
                ("pct_smokers", 10.0, 30.0),
                ("pct_obesity", 20.0, 45.0),
                ("pct_uninsured", 3.0, 25.0),
                ("pct_diabetes", 5.0, 20.0),
                ("pct_elderly", 10.0, 30.0),
                ("pct_nonwhite", 2.0, 60.0),
                ("pct_poverty", 5.0, 30.0),
            ):
                row[name] = f"{rng.uniform(low, high):.2f}"
            rows.append(row)
            index += 1
    return rows


def write_county_csv(path: Path, rows: Sequence[Dict[str, str]], header: Sequence[str] = CSV_HEADER) -> Path:
    lines = [",".join(header)]
    lines.extend(",".join(row.get(name, "") for name in header) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture()
def county_rows() -> List[Dict[str, str]]:
    return make_county_rows()


@pytest.fixture()
def county_csv(tmp_path: Path, county_rows: List[Dict[str, str]]) -> Path:
    return write_county_csv(tmp_path / "counties.csv", county_rows)


@pytest.fixture()
def small_config_payload(county_csv: Path, tmp_path: Path) -> Dict[str, object]:
    """Fast configuration: few trees, three folds, every model kind."""

    return {
        "input_path": str(county_csv),
        "output_dir": str(tmp_path / "out"),
        "seed": 11,
        "k_range": [1, 6],
        "k_override": 3,
        "cv_folds": 3,
        "kmeans_restarts": 3,
        "mda_repetitions": 2,
        "emit_plots": False,
        "models": [
            {"kind": "RANDOM_FOREST", "hyperparameters": {"trees": 25}},
            {"kind": "MLR"},
            {"kind": "LDA"},
            {"kind": "QDA"},
            {"kind": "KNN"},
            {"kind": "SVM_LINEAR"},
            {"kind": "SVM_RBF"},
            {"kind": "SVM_POLY"},
        ],
    }
