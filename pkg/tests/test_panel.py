from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from crimesynth.ingest import DailyCountSeries
from crimesynth.panel import (
    DailyPanel,
    PanelError,
    StudyDesign,
    aggregate_blocks,
    assemble_panel,
    build_panel,
    demean_pre,
    per_capita,
    read_panel,
    write_panel,
)

from .conftest import make_panel


def daily(start, n_days, value=1):
    return pd.Series(np.full(n_days, value, dtype="int64"), index=pd.date_range(start, periods=n_days, freq="D"))


def design(start, intervention, end, block_len=7, populations=None, treated="NYC"):
    return StudyDesign(start, intervention, end, block_len, treated, populations or {})


def test_two_blocks_with_one_pre_block():
    d = design(date(2019, 1, 1), date(2019, 1, 8), date(2019, 1, 14))
    blocks = aggregate_blocks(daily("2019-01-01", 14), d, min_pre_blocks=1)
    assert blocks.counts.tolist() == [7.0, 7.0]
    assert blocks.T0 == 1
    assert blocks.block_starts[1] == pd.Timestamp("2019-01-08")


def test_trailing_partial_block_dropped():
    intervention = date(2019, 3, 5)
    d = design(intervention - timedelta(days=56), intervention, intervention + timedelta(days=74))
    blocks = aggregate_blocks(daily(d.window_start, 56 + 75), d)
    assert blocks.T0 == 8
    assert blocks.T == 18


def test_leading_partial_block_dropped():
    intervention = date(2020, 1, 1)
    start = intervention - timedelta(weeks=104)
    d = design(start, intervention, intervention + timedelta(days=69), block_len=35)
    blocks = aggregate_blocks(daily(start, 728 + 70), d)
    assert blocks.T0 == 20
    assert blocks.block_starts[0] == pd.Timestamp(start + timedelta(days=28))
    assert blocks.block_starts[blocks.T0] == pd.Timestamp(intervention)
    assert np.all(blocks.counts == 35)


def test_too_few_pre_blocks():
    d = design(date(2019, 1, 1), date(2019, 2, 1), date(2019, 3, 1))
    with pytest.raises(PanelError):
        aggregate_blocks(daily("2019-01-01", 60), d)


def test_missing_days_is_error():
    d = design(date(2019, 1, 1), date(2019, 3, 5), date(2019, 3, 31))
    with pytest.raises(PanelError, match="missing"):
        aggregate_blocks(daily("2019-01-10", 80), d)


def test_per_capita():
    assert per_capita(100, 1_000_000) == pytest.approx(1e-4)
    assert per_capita(0, 1_000_000) == 0.0
    assert 1000 * 8.3e-6 == pytest.approx(0.0083)
    with pytest.raises(PanelError):
        per_capita(5, 0)


def test_demean_pre():
    assert demean_pre(np.array([1.0, 3.0, 5.0]), 2).tolist() == [-1.0, 1.0, 3.0]
    assert np.all(demean_pre(np.full(6, 4.2), 3) == 0.0)


def test_study_design_validation():
    with pytest.raises(PanelError):
        design(date(2020, 1, 1), date(2019, 1, 1), date(2020, 3, 1))
    with pytest.raises(PanelError):
        design(date(2019, 1, 1), date(2019, 6, 1), date(2020, 3, 1), populations={"NYC": 0})


def _study(populations):
    return StudyDesign(date(2019, 1, 1), date(2019, 4, 2), date(2019, 5, 31), 7, "NYC", populations)


def _daily_panel(rng, units, shift_days=0):
    start = pd.Timestamp("2019-01-01") + pd.Timedelta(days=shift_days)
    index = pd.date_range(start, periods=151, freq="D")
    return DailyPanel("assault", {u: pd.Series(rng.poisson(20, len(index)), index=index) for u in units})


def test_build_panel_orders_units(rng):
    populations = {"NYC": 8e6, "Chicago": 2.7e6, "Boston": 6.9e5, "Austin": 9.6e5}
    panel = build_panel(_daily_panel(rng, populations), _study(populations))
    assert panel.units == ("NYC", "Austin", "Boston", "Chicago")
    assert panel.treated_unit == "NYC"
    assert panel.T0 == 13
    assert np.allclose(panel.Y[:, :panel.T0].mean(axis=1), 0.0, atol=1e-15)
    assert panel.intervention_block_start == pd.Timestamp("2019-04-02")
    assert panel.population_of("Boston") == 6.9e5


def test_panel_arrays_are_read_only(random_panel):
    with pytest.raises(ValueError):
        random_panel.Y[0, 0] = 1.0


def test_panel_rejects_non_demeaned():
    panel = make_panel(np.arange(30, dtype=float).reshape(3, 10), T0=5)
    with pytest.raises(PanelError):
        type(panel)(panel.outcome, panel.units, panel.block_starts, panel.block_len_days,
                    panel.raw_counts.copy(), panel.raw_counts.copy(), panel.populations, panel.T0)


def test_assemble_names_missing_unit(rng):
    populations = {"NYC": 1.0, "A": 1.0, "B": 1.0}
    d = _study(populations)
    blocks = {u: aggregate_blocks(_daily_panel(rng, [u]).series[u], d, unit=u) for u in ("NYC", "A")}
    with pytest.raises(PanelError, match="B"):
        assemble_panel(blocks, d)


def test_block_preserving_shift_commutes(rng):
    populations = {"NYC": 10.0, "A": 20.0, "B": 30.0}
    base = _daily_panel(np.random.default_rng(1), populations)
    shifted = _daily_panel(np.random.default_rng(1), populations, shift_days=28)
    d = _study(populations)
    moved = StudyDesign(d.window_start + timedelta(days=28), d.intervention_date + timedelta(days=28),
                        d.window_end + timedelta(days=28), 7, "NYC", populations)
    a, b = build_panel(base, d), build_panel(shifted, moved)
    assert np.array_equal(a.Y, b.Y)
    assert (b.block_starts - a.block_starts).unique().tolist() == [pd.Timedelta(days=28)]


def test_from_counts_sums_level1_and_fills_zero():
    index = pd.date_range("2019-01-01", periods=5, freq="D")
    counts = {
        ("NYC", "robbery"): DailyCountSeries("NYC", "robbery", pd.Series([1, 0, 2, 0, 1], index=index)),
        ("NYC", "assault"): DailyCountSeries("NYC", "assault", pd.Series([3, 3, 3, 3, 3], index=index)),
        ("Boston", "theft"): DailyCountSeries("Boston", "theft", pd.Series([1, 1, 1, 1, 1], index=index)),
    }
    violent = DailyPanel.from_counts(counts, "violent")
    assert violent.series["NYC"].tolist() == [4, 3, 5, 3, 4]
    assert violent.series["Boston"].tolist() == [0] * 5
    assert list(DailyPanel.from_counts(counts, "robbery", units=["NYC"]).series) == ["NYC"]


def test_retime_and_for_treated(random_panel):
    retimed = random_panel.retime(20, 30)
    assert (retimed.T0, retimed.T) == (20, 30)
    assert np.allclose(retimed.Y[:, :20].mean(axis=1), 0.0, atol=1e-12)
    with pytest.raises(PanelError):
        random_panel.retime(30, 30)

    placebo = random_panel.for_treated("d2", exclude=["treated"])
    assert placebo.units == ("d2", "d1", "d3", "d4")
    assert np.array_equal(placebo.Y[0], random_panel.Y[2])


def test_write_and_read_panel(tmp_path, random_panel):
    csv_path, meta_path = write_panel(random_panel, tmp_path / "panel_test.csv")
    assert meta_path.name == "panel_test.meta.json"
    back = read_panel(csv_path)
    assert back.units == random_panel.units
    assert back.T0 == random_panel.T0
    assert np.allclose(back.Y, random_panel.Y, rtol=0, atol=1e-14)
