from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict

import pytest

from risklab.config import SEED_ENV, PipelineConfig, apply_seed_override, default_model_roster, load_config
from risklab.errors import ConfigError
from risklab.learn import MODEL_KINDS


def _payload(**overrides: Any) -> Dict[str, Any]:
    payload: Dict[str, Any] = {"input_path": "data/counties.csv", "output_dir": "out"}
    payload.update(overrides)
    return payload


def test_defaults(tmp_path: Path) -> None:
    config = PipelineConfig.from_dict(_payload(), base_dir=tmp_path)

    assert config.input_path == tmp_path / "data" / "counties.csv"
    assert config.output_dir == tmp_path / "out"
    assert config.seed == 0
    assert config.correlation_threshold == 0.7
    assert config.k_range == (1, 10)
    assert config.k_override is None
    assert config.test_fraction == 0.2
    assert config.cv_folds == 10
    assert not config.smote_before_split
    assert [entry.kind for entry in config.models] == list(MODEL_KINDS)
    assert config.models == default_model_roster()


def test_absolute_paths_are_kept(tmp_path: Path) -> None:
    target = tmp_path / "elsewhere.csv"

    config = PipelineConfig.from_dict(_payload(input_path=str(target)), base_dir=tmp_path / "conf")

    assert config.input_path == target


def test_round_trip_through_dict(tmp_path: Path) -> None:
    config = PipelineConfig.from_dict(
        _payload(seed=4, k_override=3, models=[{"kind": "KNN", "hyperparameters": {"k": 3}}],
                 shap_dependence_features=["pop_density"]),
        base_dir=tmp_path,
    )

    restored = PipelineConfig.from_dict(config.to_dict())

    assert restored == config


def test_echo_is_location_independent(tmp_path: Path) -> None:
    one = PipelineConfig.from_dict(_payload(), base_dir=tmp_path / "a")
    two = PipelineConfig.from_dict(_payload(), base_dir=tmp_path / "b")

    assert one.echo() == two.echo()
    assert "output_dir" not in one.echo()
    assert one.echo()["input_path"] == "counties.csv"


def test_model_specs_have_distinct_seeds() -> None:
    config = PipelineConfig.from_dict(_payload(seed=9))

    specs = config.model_specs()

    assert [spec.kind for spec in specs] == list(MODEL_KINDS)
    assert len({spec.seed for spec in specs}) == len(specs)
    assert specs == PipelineConfig.from_dict(_payload(seed=9)).model_specs()
    assert specs[0].seed != PipelineConfig.from_dict(_payload(seed=10)).model_specs()[0].seed


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"colour": "red"}, "colour"),
        ({"seed": -1}, "seed"),
        ({"correlation_threshold": 0.0}, "correlation_threshold"),
        ({"k_range": [1]}, "k_range"),
        ({"test_fraction": 1.0}, "test_fraction"),
        ({"cv_folds": 1}, "cv_folds"),
        ({"models": [{"hyperparameters": {}}]}, "kind"),
    ],
)
def test_schema_violations(overrides: Dict[str, Any], message: str) -> None:
    with pytest.raises(ConfigError, match=message):
        PipelineConfig.from_dict(_payload(**overrides))


def test_missing_required_key() -> None:
    with pytest.raises(ConfigError, match="output_dir"):
        PipelineConfig.from_dict({"input_path": "x.csv"})


def test_k_range_order() -> None:
    with pytest.raises(ConfigError, match="k_range"):
        PipelineConfig.from_dict(_payload(k_range=[6, 2]))


def test_unknown_model_kind() -> None:
    with pytest.raises(ConfigError, match="unknown model kind 'XGBOOST'"):
        PipelineConfig.from_dict(_payload(models=[{"kind": "XGBOOST"}]))


def test_duplicate_model_kind() -> None:
    with pytest.raises(ConfigError, match="listed twice"):
        PipelineConfig.from_dict(_payload(models=[{"kind": "LDA"}, {"kind": "LDA"}]))


def test_invalid_hyperparameter() -> None:
    with pytest.raises(ConfigError, match="RANDOM_FOREST: unknown hyperparameters ntree"):
        PipelineConfig.from_dict(_payload(models=[{"kind": "RANDOM_FOREST", "hyperparameters": {"ntree": 10}}]))
    with pytest.raises(ConfigError, match="KNN: k"):
        PipelineConfig.from_dict(_payload(models=[{"kind": "KNN", "hyperparameters": {"k": 0}}]))


def test_load_json_and_yaml(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(SEED_ENV, raising=False)
    json_path = tmp_path / "run.json"
    json_path.write_text(json.dumps(_payload(seed=5)), encoding="utf-8")
    yaml_path = tmp_path / "run.yaml"
    yaml_path.write_text("input_path: data/counties.csv\noutput_dir: out\nseed: 5\n", encoding="utf-8")

    from_json = load_config(json_path)
    from_yaml = load_config(yaml_path)

    assert from_json == from_yaml
    assert from_json.input_path == tmp_path / "data" / "counties.csv"
    assert from_json.seed == 5


def test_load_rejects_unreadable_and_malformed(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "absent.json")

    broken = tmp_path / "broken.json"
    broken.write_text('{"input_path": "a.csv", ', encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON/YAML"):
        load_config(broken)

    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="must contain an object"):
        load_config(listing)


def test_seed_precedence(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(_payload(seed=1)), encoding="utf-8")

    monkeypatch.delenv(SEED_ENV, raising=False)
    assert load_config(path).seed == 1

    monkeypatch.setenv(SEED_ENV, "7")
    assert load_config(path).seed == 7
    assert load_config(path, seed_override=3).seed == 3

    monkeypatch.setenv(SEED_ENV, "seven")
    with pytest.raises(ConfigError, match=SEED_ENV):
        apply_seed_override(PipelineConfig.from_dict(_payload()))
