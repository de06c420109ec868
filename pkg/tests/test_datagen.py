from datetime import date

import numpy as np
import pytest

from crimesynth.config_loader import DatagenSection
from crimesynth.datagen import DatagenError, FactorModelSpec, XorShift64Star, generate_panel, splitmix64


def test_splitmix64_known_output():
    state, out = splitmix64(0)
    assert out == 0xE220A8397B1DCDAF
    assert state == 0x9E3779B97F4A7C15


def test_uniforms_in_unit_interval():
    rng = XorShift64Star(1)
    draws = np.array([rng.uniform() for _ in range(10_000)])
    assert draws.min() >= 0.0
    assert draws.max() < 1.0
    assert draws.mean() == pytest.approx(0.5, abs=0.01)


def test_normal_moments():
    draws = XorShift64Star(2).normals(20_000)
    assert draws.mean() == pytest.approx(0.0, abs=0.03)
    assert draws.std() == pytest.approx(1.0, abs=0.03)


def test_generator_is_seeded():
    a = [XorShift64Star(5).next_u64() for _ in range(3)]
    b = [XorShift64Star(5).next_u64() for _ in range(3)]
    assert a == b
    assert XorShift64Star(5).next_u64() != XorShift64Star(6).next_u64()


def test_same_seed_same_panel():
    spec = FactorModelSpec(n_units=6, n_blocks=30, T0=20, seed=42)
    a, _ = generate_panel(spec)
    b, _ = generate_panel(spec)
    assert np.array_equal(a.raw_counts, b.raw_counts)
    assert np.array_equal(a.Y, b.Y)


def test_different_seeds_differ():
    a, _ = generate_panel(FactorModelSpec(n_units=6, n_blocks=30, T0=20, seed=1))
    b, _ = generate_panel(FactorModelSpec(n_units=6, n_blocks=30, T0=20, seed=2))
    assert not np.array_equal(a.raw_counts, b.raw_counts)


def test_treated_in_span_uses_affine_combination():
    panel, truth = generate_panel(FactorModelSpec(n_units=8, n_blocks=30, T0=20, seed=3, treated_in_span=True))
    combo = truth.treated_combination
    assert combo.sum() == pytest.approx(1.0)
    assert np.all(combo > 0)
    assert np.allclose(truth.loadings[0], combo @ truth.loadings[1:])


def test_effect_only_after_intervention():
    spec = FactorModelSpec(n_units=5, n_blocks=30, T0=20, seed=4, injected_effect=1.5)
    with_effect, truth = generate_panel(spec)
    without, _ = generate_panel(FactorModelSpec(n_units=5, n_blocks=30, T0=20, seed=4))
    assert np.all(truth.effect[:20] == 0.0)
    assert np.all(truth.effect[20:] == 1.5)
    diff = with_effect.raw_counts - without.raw_counts
    assert np.allclose(diff[0], truth.effect)
    assert np.all(diff[1:] == 0.0)


def test_panel_layout():
    panel, _ = generate_panel(FactorModelSpec(n_units=12, n_blocks=30, T0=20, start_date=date(2019, 1, 7)))
    assert panel.units[:3] == ("treated", "donor01", "donor02")
    assert panel.units[-1] == "donor11"
    assert panel.T0 == 20
    assert panel.block_starts[1].date() == date(2019, 1, 14)
    assert np.allclose(panel.Y[:, :20].mean(axis=1), 0.0, atol=1e-12)
    assert FactorModelSpec(n_units=101).unit_names()[1] == "donor001"


def test_fixed_factors_and_loadings():
    factors = np.ones((1, 12))
    loadings = np.arange(4, dtype=float).reshape(4, 1)
    spec = FactorModelSpec(n_units=4, n_blocks=12, T0=10, n_factors=1, noise_sd=0.0, level_sd=0.0,
                           factors=factors, loadings=loadings)
    panel, _ = generate_panel(spec)
    assert np.array_equal(panel.raw_counts, np.repeat(loadings, 12, axis=1))


@pytest.mark.parametrize("kwargs", [
    {"n_units": 2},
    {"T0": 30, "n_blocks": 30},
    {"noise_sd": -1.0},
    {"factor_ar": 1.0},
    {"n_units": 4, "loadings": np.zeros((3, 3))},
])
def test_invalid_spec(kwargs):
    with pytest.raises(DatagenError):
        FactorModelSpec(**kwargs)


def test_spec_from_config():
    section = DatagenSection(n_units=9, seed=3, injected_effect=2.0)
    spec = FactorModelSpec.from_config(section)
    assert (spec.n_units, spec.seed, spec.injected_effect) == (9, 3, 2.0)
    assert FactorModelSpec.from_config(section, seed=11).seed == 11
