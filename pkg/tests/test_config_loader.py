from datetime import date
from pathlib import Path

import pytest
import yaml
from pydantic import ValidationError

from crimesynth.config_loader import ConfigLoader, RunConfig, format_validation_error, load_run_config


def write_yaml(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


def test_defaults_from_datagen_only(tmp_path):
    config = load_run_config(str(write_yaml(tmp_path / "c.yaml", {"datagen": {"seed": 3}})))
    assert isinstance(config, RunConfig)
    assert config.datagen.seed == 3
    assert config.synth.lambda_grid_size == 100
    assert config.inference.screening_factor == 7.5
    assert config.inference.sidedness == "one_sided_upper"
    assert config.inference.alpha == 0.1
    assert config.smoothing.span == 0.07
    assert config.its.homicide.ar_lags == [1]


def test_unknown_key_is_named(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", {"datagen": {}, "synth": {"lamda_min": 1e-6}})
    with pytest.raises(ValidationError) as info:
        ConfigLoader(str(path)).validate()
    lines = format_validation_error(info.value)
    assert any(line.startswith("synth.lamda_min:") for line in lines)


def test_study_dates_must_be_ordered(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", {
        "study": {
            "window_start": "2020-01-01",
            "intervention_date": "2019-01-01",
            "window_end": "2020-03-01",
            "treated_unit": "NYC",
        },
        "datagen": {},
    })
    with pytest.raises(ValidationError):
        ConfigLoader(str(path)).validate()


def test_incidents_need_study_and_outcomes(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", {"inputs": {"daily_counts": "counts.csv"}})
    with pytest.raises(ValidationError):
        ConfigLoader(str(path)).validate()


def test_no_input_is_rejected(tmp_path):
    with pytest.raises(ValidationError):
        ConfigLoader(str(write_yaml(tmp_path / "c.yaml", {"threads": 2}))).validate()


def test_relative_paths_resolve_against_config_dir(tmp_path):
    sub = tmp_path / "configs"
    sub.mkdir()
    path = write_yaml(sub / "c.yaml", {
        "study": {
            "window_start": "2018-01-01",
            "intervention_date": "2020-01-01",
            "window_end": "2020-03-15",
            "treated_unit": "NYC",
        },
        "inputs": {"daily_counts": "../data/counts.csv", "panels": {"a": "/abs/panel.csv"}},
        "outcomes": {"assault": {}},
    })
    config = ConfigLoader(str(path)).validate()
    assert config.inputs.daily_counts == sub / "../data/counts.csv"
    assert config.inputs.panels["a"] == Path("/abs/panel.csv")
    assert config.outcomes["assault"].block_len_days is None
    assert config.block_len_for("assault") == 7
    assert config.study.intervention_date == date(2020, 1, 1)


def test_overrides_use_dotted_keys(tmp_path):
    loader = ConfigLoader(str(write_yaml(tmp_path / "c.yaml", {"datagen": {"seed": 1}})))
    config = loader.validate({"datagen.seed": 99, "threads": 3})
    assert config.datagen.seed == 99
    assert config.threads == 3
    assert loader.get("datagen.seed") == 1


def test_get_and_required(tmp_path):
    loader = ConfigLoader(str(write_yaml(tmp_path / "c.yaml", {"datagen": {"seed": 1}})))
    assert loader.get("datagen.seed") == 1
    assert loader.get("synth.lambda_min", 0.5) == 0.5
    assert loader.get_section("logging") == {}
    with pytest.raises(ValueError):
        loader.get_required("study.treated_unit")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ConfigLoader(str(tmp_path / "absent.yaml"))


def test_non_mapping_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("- a\n- b\n", encoding="utf-8")
    with pytest.raises(ValueError):
        ConfigLoader(str(path))


def test_example_config_validates():
    root = Path(__file__).resolve().parent.parent
    config = ConfigLoader(str(root / "config.example.yaml")).validate()
    assert config.study.treated_unit == "NYC"
    assert config.outcomes["homicide"].block_len_days == 28
    assert config.block_len_for("robbery") == 21
    assert config.block_len_for("drug") == 14
    assert [f.schema_.city_id for f in config.inputs.incident_files] == ["NYC", "Chicago"]


@pytest.mark.parametrize("outcome, days", [
    ("assault", 7), ("theft", 7), ("drug", 14), ("robbery", 21), ("burglary", 21), ("homicide", 7),
])
def test_block_length_defaults_per_outcome(outcome, days):
    config = RunConfig.model_validate({"datagen": {}, "outcomes": {outcome: {}}})
    assert config.block_len_for(outcome) == days


def test_configured_block_length_wins():
    config = RunConfig.model_validate({"datagen": {}, "outcomes": {"robbery": {"block_len_days": 7}}})
    assert config.block_len_for("robbery") == 7
    with pytest.raises(ValidationError):
        RunConfig.model_validate({"datagen": {}, "outcomes": {"robbery": {"block_len_days": 0}}})
