import numpy as np
import pandas as pd
import pytest

from crimesynth.smoothing import SmoothingError, loess_smooth


def test_linear_series_reproduced():
    y = 3.0 - 0.25 * np.arange(100)
    assert np.allclose(loess_smooth(y), y, atol=1e-9)


def test_constant_series_unchanged():
    assert np.allclose(loess_smooth(np.full(50, 7.0), span=0.2), 7.0)


def test_noisy_sine_is_smoothed():
    gen = np.random.default_rng(9)
    x = np.arange(400)
    truth = np.sin(2 * np.pi * x / 200)
    noisy = truth + gen.normal(scale=0.3, size=400)
    smoothed = loess_smooth(noisy, span=0.07)
    assert np.mean((smoothed - truth) ** 2) < 0.25 * np.mean((noisy - truth) ** 2)


def test_series_keeps_index():
    index = pd.date_range("2019-01-07", periods=30, freq="7D")
    series = pd.Series(np.arange(30, dtype=float), index=index, name="residual")
    out = loess_smooth(series, span=0.3)
    assert isinstance(out, pd.Series)
    assert out.index.equals(index)
    assert out.name == "residual"


def test_uneven_x():
    x = np.array([0.0, 1.0, 3.0, 4.0, 8.0, 9.0, 13.0, 20.0])
    y = 2.0 * x + 1.0
    assert np.allclose(loess_smooth(y, span=0.5, x=x), y)


@pytest.mark.parametrize("span", [0.0, -0.1, 1.5])
def test_bad_span(span):
    with pytest.raises(SmoothingError):
        loess_smooth(np.arange(20.0), span=span)


def test_too_few_points():
    with pytest.raises(SmoothingError):
        loess_smooth(np.arange(3.0), span=1.0)
