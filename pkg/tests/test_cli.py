import json
import logging

import numpy as np
import pandas as pd
import pytest
import yaml

from crimesynth.cli import EXIT_CONFIG, EXIT_OK, design_for, main
from crimesynth.config_loader import RunConfig
from crimesynth.panel import read_panel

BUNDLE_TABLES = [
    "main_table.csv",
    "effect_bounds.csv",
    "adjusted_pvalues.csv",
    "placebos_in_time.csv",
    "placebos_early_rollin.csv",
    "placebo_units.csv",
]


@pytest.fixture(autouse=True)
def restore_root_logging():
    handlers = logging.root.handlers[:]
    level = logging.root.level
    yield
    logging.root.handlers[:] = handlers
    logging.root.setLevel(level)


def run_cli(*args):
    return main([*args, "--simple-logs"])


def test_run_writes_complete_bundle(tmp_path, datagen_config):
    out = tmp_path / "bundle"
    assert run_cli("run", "--config", str(datagen_config), "--out", str(out)) == EXIT_OK
    for name in BUNDLE_TABLES + ["weights.csv", "series_synthetic.csv", "summary.txt"]:
        assert (out / name).is_file(), name
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["complete"] is True
    assert manifest["outcomes"] == {"synthetic": "complete"}
    assert manifest["failures"] == []
    assert set(BUNDLE_TABLES) <= set(manifest["files"])
    assert manifest["smoothing_span"] == 0.07

    main_table = pd.read_csv(out / "main_table.csv")
    assert len(main_table) == 1
    early = pd.read_csv(out / "placebos_early_rollin.csv")
    assert len(early) == 1


def test_run_is_byte_identical(tmp_path, datagen_config):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run_cli("run", "--config", str(datagen_config), "--out", str(first), "--threads", "1") == EXIT_OK
    assert run_cli("run", "--config", str(datagen_config), "--out", str(second), "--threads", "3") == EXIT_OK
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_unknown_key_is_config_error(tmp_path, datagen_config, capsys):
    data = yaml.safe_load(datagen_config.read_text(encoding="utf-8"))
    data["synth"]["lamda_min"] = 1e-6
    datagen_config.write_text(yaml.safe_dump(data), encoding="utf-8")
    out = tmp_path / "never"
    assert run_cli("run", "--config", str(datagen_config), "--out", str(out)) == EXIT_CONFIG
    assert not out.exists()
    assert "synth.lamda_min" in capsys.readouterr().err


def test_missing_config_is_config_error(tmp_path):
    assert run_cli("run", "--config", str(tmp_path / "absent.yaml")) == EXIT_CONFIG


def test_no_command_prints_help(capsys):
    assert main([]) == EXIT_CONFIG
    assert "usage" in capsys.readouterr().out


def test_gen_writes_panel_and_truth(tmp_path, datagen_config):
    out = tmp_path / "gen"
    assert run_cli("gen", "--config", str(datagen_config), "--out", str(out), "--seed", "11") == EXIT_OK
    panel = read_panel(out / "panel_synthetic.csv")
    assert panel.T0 == 50
    assert len(panel.units) == 8
    truth = json.loads((out / "ground_truth_synthetic.json").read_text(encoding="utf-8"))
    assert truth["seed"] == 11
    assert truth["injected_effect"] == 1.0
    assert sum(truth["treated_combination"]) == pytest.approx(1.0)


def test_unknown_outcome_fails(tmp_path, datagen_config):
    assert run_cli("fit", "--config", str(datagen_config), "--out", str(tmp_path), "--outcome", "nope") == 1


def test_panel_from_daily_counts(tmp_path):
    gen = np.random.default_rng(21)
    days = pd.date_range("2018-01-01", "2020-03-15", freq="D")
    cities = ["NYC", "Austin", "Boston", "Chicago", "Denver"]
    frame = pd.concat([
        pd.DataFrame({"date": days.strftime("%Y-%m-%d"), "city": city, "category": "assault",
                      "count": gen.poisson(30, len(days))})
        for city in cities
    ])
    frame.to_csv(tmp_path / "counts.csv", index=False)
    config = {
        "study": {
            "window_start": "2018-01-01",
            "intervention_date": "2020-01-01",
            "window_end": "2020-03-15",
            "treated_unit": "NYC",
            "populations": {city: 1.0e6 for city in cities},
        },
        "inputs": {"daily_counts": "counts.csv"},
        "outcomes": {"assault": {"block_len_days": 7}},
    }
    path = tmp_path / "study.yaml"
    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    out = tmp_path / "panels"
    assert run_cli("panel", "--config", str(path), "--out", str(out)) == EXIT_OK
    panel = read_panel(out / "panel_assault.csv")
    assert panel.units == ("NYC", "Austin", "Boston", "Chicago", "Denver")
    assert panel.intervention_block_start == pd.Timestamp("2020-01-01")
    assert panel.T0 == 104


def test_design_uses_outcome_block_length():
    config = RunConfig.model_validate({
        "study": {
            "window_start": "2018-01-01",
            "intervention_date": "2020-01-01",
            "window_end": "2020-03-15",
            "treated_unit": "NYC",
        },
        "inputs": {"daily_counts": "counts.csv"},
        "outcomes": {"robbery": {}, "drug": {}, "assault": {"block_len_days": 14}},
    })
    assert design_for(config, "robbery").block_len_days == 21
    assert design_for(config, "drug").block_len_days == 14
    assert design_for(config, "assault").block_len_days == 14
