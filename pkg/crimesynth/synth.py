"""
Ridge-penalised synthetic control.

Weights solve

    min_{c, w}  (1/n) * sum_t (y_t - c - X_t w)^2 + lambda * ||w||^2
    s.t.        sum_j w_j = 1

over the pre-period, with the intercept c unpenalised and outside the
constraint. Negative weights are allowed. Eliminating c by centering leaves
an equality-constrained ridge problem whose stationarity system is solved in
closed form.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np
from scipy import linalg

from .config_loader import SynthSection
from .panel import Panel

logger = logging.getLogger(__name__)

PER_1000 = 1000.0
DEFAULT_NYC_POPULATION = 8_419_000
MIN_TUNING_BLOCKS = 10

PenaltyScaling = Literal["relative", "absolute"]


class SolverError(ValueError):
    """Weight program cannot be solved as posed."""


@dataclass(frozen=True)
class SynthSettings:
    lambda_min: float = 1e-8
    lambda_max: float = 1e-2
    lambda_grid_size: int = 100
    train_fraction: float = 0.8
    penalty_scaling: PenaltyScaling = "relative"
    fixed_lambda: Optional[float] = None

    @classmethod
    def from_config(cls, section: SynthSection) -> "SynthSettings":
        return cls(**section.model_dump())

    def grid(self) -> np.ndarray:
        return np.logspace(np.log10(self.lambda_min), np.log10(self.lambda_max), self.lambda_grid_size)


@dataclass(frozen=True)
class WeightSolution:
    donors: Tuple[str, ...]
    weights: np.ndarray
    intercept: float
    lambda_: float
    pre_rmse: float
    pre_r2: float
    validation_rmse: Optional[float] = None
    penalty: float = 0.0  # lambda after penalty scaling

    def weight_of(self, donor: str) -> float:
        return float(self.weights[self.donors.index(donor)])


@dataclass(frozen=True)
class CounterfactualSeries:
    predicted: np.ndarray
    observed: np.ndarray
    T0: int

    @property
    def residuals(self) -> np.ndarray:
        return self.observed - self.predicted


@dataclass(frozen=True)
class EffectEstimate:
    ate_per_capita: float
    rmse_ratio: float
    post_rmse: float
    pre_rmse: float
    ratio_undefined: bool = False
    ate_events: Optional[float] = None

    @property
    def ate_per_1000(self) -> float:
        return PER_1000 * self.ate_per_capita


@dataclass(frozen=True)
class LambdaTrace:
    grid: np.ndarray
    validation_rmse: np.ndarray
    best_index: int
    n_train: int
    on_boundary: bool

    @property
    def best_lambda(self) -> float:
        return float(self.grid[self.best_index])


@dataclass(frozen=True)
class SynthFit:
    panel: Panel
    solution: WeightSolution
    counterfactual: CounterfactualSeries
    effect: EffectEstimate
    trace: Optional[LambdaTrace] = None


@dataclass(frozen=True)
class _RidgeSystem:
    """Centered, scale-normalised pre-period moments for one fit window."""

    G: np.ndarray
    b: np.ndarray
    x_mean: np.ndarray
    y_mean: float
    scale: float

    @classmethod
    def build(cls, y: np.ndarray, X: np.ndarray) -> "_RidgeSystem":
        n = len(y)
        x_mean = X.mean(axis=0)
        y_mean = float(y.mean())
        Xc = X - x_mean
        yc = y - y_mean
        scale = float(np.mean(X * X))
        if scale == 0.0:
            scale = 1.0
        return cls(Xc.T @ Xc / (n * scale), Xc.T @ yc / (n * scale), x_mean, y_mean, scale)

    def solve(self, lam: float, scaling: PenaltyScaling) -> Tuple[np.ndarray, float, float]:
        """Return (weights, intercept, effective penalty)."""
        J = len(self.b)
        # G is normalised by the donor scale, so a relative penalty enters as-is.
        ridge = lam if scaling == "relative" else lam / self.scale
        K = np.zeros((J + 1, J + 1))
        K[:J, :J] = self.G + ridge * np.eye(J)
        K[:J, J] = 1.0
        K[J, :J] = 1.0
        rhs = np.append(self.b, 1.0)
        if ridge == 0.0 and np.linalg.matrix_rank(K) < J + 1:
            raise SolverError("stationarity system is singular: donors are collinear at lambda=0, use lambda > 0")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", linalg.LinAlgWarning)
                sol = linalg.solve(K, rhs, assume_a="sym")
        except linalg.LinAlgError as e:
            raise SolverError(f"stationarity system could not be solved ({e}); use lambda > 0")
        w = sol[:J]
        w = w + (1.0 - w.sum()) / J
        intercept = self.y_mean - float(self.x_mean @ w)
        return w, intercept, ridge * self.scale


def _canonical_order(donors: Tuple[str, ...]) -> np.ndarray:
    # Solving in name order makes results independent of donor row order.
    return np.argsort(np.array(donors, dtype=object), kind="stable")


def _pre_arrays(panel: Panel, n_fit: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = _canonical_order(panel.donors)
    y = panel.Y[0, :n_fit]
    X = panel.Y[1:][order, :n_fit].T
    return y, X, order


def _fit_metrics(y: np.ndarray, fitted: np.ndarray) -> Tuple[float, float]:
    resid = y - fitted
    sse = float(resid @ resid)
    sst = float(y @ y)
    rmse = float(np.sqrt(sse / len(y)))
    if sst == 0.0:
        r2 = 1.0 if sse == 0.0 else -np.inf
    else:
        r2 = 1.0 - sse / sst
    return rmse, r2


def solve_weights(panel: Panel, lam: float, penalty_scaling: PenaltyScaling = "relative",
                  n_fit: Optional[int] = None) -> WeightSolution:
    """
    Solve the sum-to-one ridge program on the first ``n_fit`` blocks
    (default: the whole pre-period).

    Raises:
        SolverError: fewer than 2 donors, negative lambda, or a singular
            system at lambda=0
    """
    if len(panel.donors) < 2:
        raise SolverError(f"need at least 2 donors, got {len(panel.donors)}")
    if lam < 0:
        raise SolverError(f"lambda must be non-negative, got {lam}")
    n_fit = panel.T0 if n_fit is None else n_fit
    if not 2 <= n_fit <= panel.T0:
        raise SolverError(f"fit window must cover 2..{panel.T0} pre blocks, got {n_fit}")

    y, X, order = _pre_arrays(panel, n_fit)
    system = _RidgeSystem.build(y, X)
    w_sorted, intercept, penalty = system.solve(lam, penalty_scaling)
    weights = np.empty_like(w_sorted)
    weights[order] = w_sorted
    pre_rmse, pre_r2 = _fit_metrics(y, intercept + X @ w_sorted)
    return WeightSolution(panel.donors, weights, intercept, float(lam), pre_rmse, pre_r2, penalty=penalty)


def weight_objective(panel: Panel, weights: np.ndarray, intercept: float, lam: float,
                     penalty_scaling: PenaltyScaling = "relative", n_fit: Optional[int] = None) -> float:
    """Value of the penalised program at (weights, intercept); weights in panel donor order."""
    n_fit = panel.T0 if n_fit is None else n_fit
    y = panel.Y[0, :n_fit]
    X = panel.Y[1:, :n_fit].T
    resid = y - intercept - X @ np.asarray(weights)
    penalty = lam
    if penalty_scaling == "relative":
        scale = float(np.mean(X * X))
        penalty = lam * (scale if scale != 0.0 else 1.0)
    return float(resid @ resid / n_fit + penalty * np.sum(np.square(weights)))


def penalty_scale(panel: Panel, n_fit: Optional[int] = None) -> float:
    """Mean squared pre-period donor value; the unit of a relative penalty."""
    n_fit = panel.T0 if n_fit is None else n_fit
    scale = float(np.mean(np.square(panel.Y[1:, :n_fit])))
    return scale if scale != 0.0 else 1.0


def tune_lambda(panel: Panel, settings: SynthSettings = SynthSettings()) -> Tuple[float, LambdaTrace]:
    """
    Pick lambda on a log grid by holdout RMSE within the pre-period.

    Each grid value is fit on the first floor(train_fraction * T0) blocks and
    scored on the remaining pre blocks. Ties go to the smaller lambda. An
    argmin on either end of the grid is logged as a warning.

    Raises:
        SolverError: T0 below 10 blocks
    """
    if panel.T0 < MIN_TUNING_BLOCKS:
        raise SolverError(f"{panel.outcome}: lambda tuning needs T0 >= {MIN_TUNING_BLOCKS}, got {panel.T0}")
    n_train = int(np.floor(settings.train_fraction * panel.T0))
    n_train = min(max(n_train, 2), panel.T0 - 1)

    y, X, order = _pre_arrays(panel, panel.T0)
    system = _RidgeSystem.build(y[:n_train], X[:n_train])
    y_val, X_val = y[n_train:], X[n_train:]

    grid = settings.grid()
    scores = np.empty(len(grid))
    for i, lam in enumerate(grid):
        w, intercept, _ = system.solve(float(lam), settings.penalty_scaling)
        resid = y_val - intercept - X_val @ w
        scores[i] = np.sqrt(resid @ resid / len(resid))

    best = int(np.argmin(scores))
    on_boundary = best in (0, len(grid) - 1)
    if on_boundary:
        logger.warning(f"{panel.outcome}/{panel.treated_unit}: optimal lambda {grid[best]:.3g} "
                       f"is on the grid boundary [{grid[0]:.3g}, {grid[-1]:.3g}]")
    trace = LambdaTrace(grid, scores, best, n_train, on_boundary)
    return float(grid[best]), trace


def predict_counterfactual(panel: Panel, solution: WeightSolution) -> CounterfactualSeries:
    """predicted[t] = intercept + sum_j w_j Y_jt for every block."""
    if solution.donors != panel.donors:
        raise SolverError(f"solution donors {solution.donors} do not match panel donors {panel.donors}")
    order = _canonical_order(panel.donors)
    predicted = solution.intercept + panel.Y[1:][order].T @ solution.weights[order]
    return CounterfactualSeries(predicted, panel.Y[0].copy(), panel.T0)


def _rmse(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def estimate_ate(series: CounterfactualSeries, T0: Optional[int] = None,
                 population: Optional[float] = None) -> EffectEstimate:
    """
    Average post-period gap and the post/pre RMSE ratio.

    A zero pre-period RMSE makes the ratio undefined; it is reported as +inf
    with ``ratio_undefined`` set.
    """
    T0 = series.T0 if T0 is None else T0
    resid = series.residuals
    if not 1 <= T0 < len(resid):
        raise SolverError(f"need 1 <= T0 < T, got T0={T0}, T={len(resid)}")
    ate = float(np.mean(resid[T0:]))
    pre_rmse = _rmse(resid[:T0])
    post_rmse = _rmse(resid[T0:])
    undefined = pre_rmse == 0.0
    ratio = np.inf if undefined else post_rmse / pre_rmse
    events = to_events(ate, population) if population is not None else None
    return EffectEstimate(ate, ratio, post_rmse, pre_rmse, undefined, events)


def to_events(ate_per_capita: float, population: float) -> float:
    """Convert a per-person-per-block effect to events per block."""
    if not population > 0:
        raise SolverError(f"population must be positive, got {population}")
    return ate_per_capita * population


def fit_synthetic_control(panel: Panel, settings: SynthSettings = SynthSettings()) -> SynthFit:
    """Tune (unless fixed) lambda, solve weights, predict and estimate the effect."""
    trace = None
    if settings.fixed_lambda is not None:
        lam = settings.fixed_lambda
    else:
        lam, trace = tune_lambda(panel, settings)
    solution = solve_weights(panel, lam, settings.penalty_scaling)
    if trace is not None:
        solution = WeightSolution(
            solution.donors, solution.weights, solution.intercept, solution.lambda_,
            solution.pre_rmse, solution.pre_r2, float(trace.validation_rmse[trace.best_index]), solution.penalty,
        )
    counterfactual = predict_counterfactual(panel, solution)
    effect = estimate_ate(counterfactual, panel.T0, panel.populations[0])
    logger.debug(f"{panel.outcome}/{panel.treated_unit}: lambda={lam:.3g} ate={effect.ate_per_capita:.6g} "
                 f"pre_rmse={solution.pre_rmse:.3g}")
    return SynthFit(panel, solution, counterfactual, effect, trace)
