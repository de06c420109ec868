"""Shared fixtures: small panels and run configurations."""
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import pytest
import yaml

from crimesynth.panel import Panel

REPO_ROOT = Path(__file__).resolve().parent.parent
CATEGORY_MAP = REPO_ROOT / "data" / "category_map.tsv"


def make_panel(raw, T0: int, units: Optional[Sequence[str]] = None, populations: Optional[Sequence[float]] = None,
               start: str = "2019-01-07", block_len_days: int = 7, outcome: str = "test") -> Panel:
    """Panel from a (units, blocks) array of raw values; populations default to 1."""
    raw = np.asarray(raw, dtype=float)
    n, T = raw.shape
    units = list(units) if units is not None else ["treated"] + [f"d{j}" for j in range(1, n)]
    populations = list(populations) if populations is not None else [1.0] * n
    starts = pd.date_range(start, periods=T, freq=f"{block_len_days}D")
    return Panel.from_raw(outcome, units, starts, block_len_days, raw, populations, T0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def random_panel(rng):
    """Treated unit plus 4 independent donors over 40 blocks, T0 = 30."""
    raw = 10.0 + rng.normal(size=(5, 40))
    return make_panel(raw, T0=30)


@pytest.fixture
def datagen_config(tmp_path):
    """A small deterministic datagen run configuration; returns its path."""
    config = {
        "datagen": {
            "outcome": "synthetic",
            "n_units": 8,
            "n_blocks": 60,
            "T0": 50,
            "n_factors": 2,
            "noise_sd": 0.5,
            "injected_effect": 1.0,
            "seed": 7,
            "start_date": "2018-01-01",
            "treated_in_span": True,
        },
        "synth": {"lambda_min": 1.0e-6, "lambda_max": 1.0e-1, "lambda_grid_size": 10},
        "inference": {
            "in_time_dates": ["2018-06-01"],
            "early_rollin_dates": ["2018-11-01"],
        },
        "output": {"directory": "reports"},
        "threads": 2,
    }
    path = tmp_path / "datagen.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return path
