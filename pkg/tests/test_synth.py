import logging

import numpy as np
import pytest
from scipy import optimize

from crimesynth.synth import (
    DEFAULT_NYC_POPULATION,
    CounterfactualSeries,
    SolverError,
    SynthSettings,
    WeightSolution,
    estimate_ate,
    fit_synthetic_control,
    penalty_scale,
    predict_counterfactual,
    solve_weights,
    to_events,
    tune_lambda,
    weight_objective,
)

from .conftest import make_panel


def projected_gradient(panel, lam, n_iter=20_000):
    """Minimise the penalised program by projected gradient on {sum(w) = 1}."""
    y = panel.Y[0, :panel.T0]
    X = panel.Y[1:, :panel.T0].T
    n, J = X.shape
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    ridge = lam * penalty_scale(panel)
    H = 2.0 * (Xc.T @ Xc / n + ridge * np.eye(J))
    step = 1.0 / np.linalg.eigvalsh(H).max()
    w = np.full(J, 1.0 / J)
    for _ in range(n_iter):
        g = H @ w - 2.0 * Xc.T @ yc / n
        w = w - step * (g - g.mean())
    return w, float(y.mean() - X.mean(axis=0) @ w)


def slsqp_oracle(panel, lam):
    """Minimise the same program with SLSQP; returns the oracle objective at a feasible point."""
    y = panel.Y[0, :panel.T0]
    X = panel.Y[1:, :panel.T0].T
    n, J = X.shape
    ridge = lam * penalty_scale(panel)

    def objective(x):
        r = y - x[J] - X @ x[:J]
        return r @ r / n + ridge * x[:J] @ x[:J]

    def gradient(x):
        r = y - x[J] - X @ x[:J]
        return np.append(-2.0 * X.T @ r / n + 2.0 * ridge * x[:J], -2.0 * r.sum() / n)

    result = optimize.minimize(
        objective, np.append(np.full(J, 1.0 / J), 0.0), jac=gradient, method="SLSQP",
        constraints=[{"type": "eq", "fun": lambda x: x[:J].sum() - 1.0, "jac": lambda x: np.append(np.ones(J), 0.0)}],
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    w = result.x[:J] + (1.0 - result.x[:J].sum()) / J
    c = float(np.mean(y - X @ w))
    return weight_objective(panel, w, c, lam)


def test_treated_equal_to_donor_at_zero_lambda(rng):
    donors = 5.0 + rng.normal(size=(2, 30))
    panel = make_panel(np.vstack([donors[0], donors]), T0=20, units=["treated", "A", "B"])
    solution = solve_weights(panel, 0.0)
    assert solution.weight_of("A") == pytest.approx(1.0, abs=1e-10)
    assert solution.weight_of("B") == pytest.approx(0.0, abs=1e-10)
    assert solution.intercept == pytest.approx(0.0, abs=1e-12)
    assert solution.pre_rmse == pytest.approx(0.0, abs=1e-12)
    assert solution.pre_r2 == pytest.approx(1.0)


def test_identical_donors_split_evenly(rng):
    donor = 5.0 + rng.normal(size=30)
    treated = 5.0 + rng.normal(size=30)
    panel = make_panel(np.vstack([treated, donor, donor]), T0=20)
    solution = solve_weights(panel, 1e-3)
    assert np.allclose(solution.weights, [0.5, 0.5], atol=1e-12)


def test_collinear_donors_need_positive_lambda(rng):
    donor = 5.0 + rng.normal(size=30)
    panel = make_panel(np.vstack([5.0 + rng.normal(size=30), donor, donor]), T0=20)
    with pytest.raises(SolverError, match="lambda > 0"):
        solve_weights(panel, 0.0)


def test_weights_sum_to_one_and_allow_negatives(rng):
    raw = 10.0 + rng.normal(size=(6, 40))
    raw[0] = 2.0 * raw[1] - raw[2] + 0.01 * rng.normal(size=40)
    solution = solve_weights(make_panel(raw, T0=30), 1e-8)
    assert solution.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert solution.weights.min() < 0


def test_matches_projected_gradient_oracle(random_panel):
    lam = 1e-4
    solution = solve_weights(random_panel, lam)
    w_oracle, c_oracle = projected_gradient(random_panel, lam)
    assert np.allclose(solution.weights, w_oracle, atol=1e-8)
    ours = weight_objective(random_panel, solution.weights, solution.intercept, lam)
    oracle = weight_objective(random_panel, w_oracle, c_oracle, lam)
    assert ours == pytest.approx(oracle, rel=1e-8)


def test_closed_form_never_worse_than_iterative_oracle():
    lambdas = (1e-8, 1e-6, 1e-4, 1e-3, 1e-2)
    for seed in range(100):
        gen = np.random.default_rng(1000 + seed)
        J = int(gen.integers(2, 7))
        T = int(gen.integers(20, 61))
        T0 = int(gen.integers(12, T - 2))
        panel = make_panel(10.0 + gen.normal(size=(J + 1, T)), T0=T0)
        for lam in lambdas:
            solution = solve_weights(panel, lam)
            ours = weight_objective(panel, solution.weights, solution.intercept, lam)
            assert solution.weights.sum() == pytest.approx(1.0, abs=1e-12)
            assert ours <= slsqp_oracle(panel, lam) * (1.0 + 1e-8) + 1e-15, (seed, lam)


def test_weight_norm_shrinks_as_lambda_grows(rng):
    raw = 10.0 + rng.normal(size=(7, 60))
    raw[0] = 1.5 * raw[1] - 0.5 * raw[2] + 0.2 * rng.normal(size=60)
    panel = make_panel(raw, T0=50)
    norms = np.array([np.sum(solve_weights(panel, lam).weights ** 2) for lam in SynthSettings().grid()])
    assert np.all(np.diff(norms) <= 1e-12 * norms[:-1])
    assert norms[-1] < norms[0]
    assert norms[-1] >= 1.0 / 6 - 1e-12


def test_default_lambda_grid():
    grid = SynthSettings().grid()
    assert len(grid) == 100
    assert grid[0] == pytest.approx(1e-8, rel=1e-12)
    assert grid[-1] == pytest.approx(1e-2, rel=1e-12)
    assert np.allclose(np.diff(np.log10(grid)), 6.0 / 99)


def test_absolute_and_relative_penalties_agree(random_panel):
    lam = 1e-3
    relative = solve_weights(random_panel, lam, "relative")
    absolute = solve_weights(random_panel, lam * penalty_scale(random_panel), "absolute")
    assert np.allclose(relative.weights, absolute.weights, atol=1e-12)
    assert relative.penalty == pytest.approx(absolute.penalty)


def test_relative_penalty_is_scale_invariant(rng):
    raw = 10.0 + rng.normal(size=(5, 40))
    base = solve_weights(make_panel(raw, T0=30), 1e-3)
    scaled = solve_weights(make_panel(raw * 1000.0, T0=30), 1e-3)
    assert np.allclose(base.weights, scaled.weights, rtol=0, atol=1e-10)
    assert scaled.pre_rmse == pytest.approx(1000.0 * base.pre_rmse, rel=1e-8)


def test_donor_order_does_not_change_weights(rng):
    raw = 10.0 + rng.normal(size=(5, 40))
    units = ["treated", "a", "b", "c", "d"]
    order = [0, 3, 1, 4, 2]
    first = solve_weights(make_panel(raw, T0=30, units=units), 1e-4)
    second = solve_weights(make_panel(raw[order], T0=30, units=[units[i] for i in order]), 1e-4)
    for donor in units[1:]:
        assert first.weight_of(donor) == second.weight_of(donor)
    assert first.intercept == second.intercept


def test_solver_rejects_bad_input(random_panel):
    with pytest.raises(SolverError):
        solve_weights(random_panel, -1.0)
    with pytest.raises(SolverError):
        solve_weights(random_panel.for_treated("treated", exclude=["d2", "d3", "d4"]), 1e-3)


def test_tuning_picks_smallest_lambda_when_noiseless(rng, caplog):
    donors = 10.0 + rng.normal(size=(5, 60))
    weights = np.array([0.4, 0.3, 0.2, 0.1, 0.0])
    panel = make_panel(np.vstack([weights @ donors, donors]), T0=50)
    settings = SynthSettings(lambda_min=1e-6, lambda_max=1e-1, lambda_grid_size=20)
    with caplog.at_level(logging.WARNING, logger="crimesynth.synth"):
        lam, trace = tune_lambda(panel, settings)
    assert lam == pytest.approx(1e-6)
    assert trace.best_index == 0
    assert trace.on_boundary
    assert trace.n_train == 40
    assert np.all(np.diff(trace.validation_rmse[:10]) >= -1e-12)
    assert "grid boundary" in caplog.text


def test_tuning_trace_is_consistent(random_panel):
    settings = SynthSettings(lambda_grid_size=15)
    lam, trace = tune_lambda(random_panel, settings)
    assert len(trace.grid) == len(trace.validation_rmse) == 15
    assert trace.best_index == int(np.argmin(trace.validation_rmse))
    assert lam == trace.best_lambda
    assert trace.n_train == 24


def test_tuning_needs_ten_pre_blocks(rng):
    panel = make_panel(10.0 + rng.normal(size=(4, 15)), T0=9)
    with pytest.raises(SolverError):
        tune_lambda(panel)


def test_predict_with_unit_weight_reproduces_donor(random_panel):
    solution = WeightSolution(random_panel.donors, np.array([1.0, 0.0, 0.0, 0.0]), 0.0, 0.0, 0.0, 1.0)
    series = predict_counterfactual(random_panel, solution)
    assert np.array_equal(series.predicted, random_panel.Y[1])
    assert np.array_equal(series.observed, random_panel.Y[0])


def test_predict_is_a_dot_product(random_panel):
    w = np.array([0.1, 0.2, 0.3, 0.4])
    solution = WeightSolution(random_panel.donors, w, 0.5, 0.0, 0.0, 1.0)
    predicted = predict_counterfactual(random_panel, solution).predicted
    for t in (0, 17, 39):
        assert predicted[t] == pytest.approx(0.5 + random_panel.Y[1:, t] @ w)


def test_predict_rejects_foreign_solution(random_panel):
    solution = WeightSolution(("x", "y", "z", "w"), np.full(4, 0.25), 0.0, 0.0, 0.0, 1.0)
    with pytest.raises(SolverError):
        predict_counterfactual(random_panel, solution)


def test_ate_is_mean_post_residual():
    observed = np.array([1.0, -1.0, 1.0, -1.0, 3.0, 1.0])
    effect = estimate_ate(CounterfactualSeries(np.zeros(6), observed, 2))
    assert effect.ate_per_capita == pytest.approx(1.0)
    assert effect.ate_per_1000 == pytest.approx(1000.0)


def test_ate_zero_when_post_matches():
    observed = np.array([1.0, -1.0, 0.0, 0.0])
    effect = estimate_ate(CounterfactualSeries(np.zeros(4), observed, 2))
    assert effect.ate_per_capita == 0.0
    assert effect.rmse_ratio == 0.0


def test_rmse_ratio_of_identical_multisets():
    observed = np.array([1.0, -2.0, 3.0, 3.0, 1.0, -2.0])
    assert estimate_ate(CounterfactualSeries(np.zeros(6), observed, 3)).rmse_ratio == pytest.approx(1.0)


def test_zero_pre_rmse_flags_ratio():
    effect = estimate_ate(CounterfactualSeries(np.zeros(4), np.array([0.0, 0.0, 1.0, 1.0]), 2))
    assert effect.ratio_undefined
    assert effect.rmse_ratio == np.inf


@pytest.mark.parametrize("per_1000, events, tol", [(0.0083, 69.9, 0.5), (0.0274, 230.7, 1.0), (0.0, 0.0, 0.0)])
def test_events_conversion(per_1000, events, tol):
    assert to_events(per_1000 / 1000.0, DEFAULT_NYC_POPULATION) == pytest.approx(events, abs=tol)


def test_events_need_positive_population():
    with pytest.raises(SolverError):
        to_events(1e-6, 0)


def test_fit_with_fixed_lambda_skips_tuning(random_panel):
    fit = fit_synthetic_control(random_panel, SynthSettings(fixed_lambda=1e-3))
    assert fit.trace is None
    assert fit.solution.lambda_ == 1e-3
    assert fit.solution.validation_rmse is None
    assert fit.effect.ate_events == pytest.approx(fit.effect.ate_per_capita * 1.0)


def test_fit_is_deterministic(random_panel):
    a = fit_synthetic_control(random_panel, SynthSettings(lambda_grid_size=20))
    b = fit_synthetic_control(random_panel, SynthSettings(lambda_grid_size=20))
    assert np.array_equal(a.solution.weights, b.solution.weights)
    assert a.effect == b.effect
