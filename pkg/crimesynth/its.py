"""
Interrupted time series: segmented regression with ARIMA errors for daily
counts, and a Poisson GLM with lagged-count regressors for sparse weekly
series.
"""

import logging
import warnings
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pandas.tseries.holiday import USFederalHolidayCalendar
from scipy import stats
from scipy.optimize import least_squares
from scipy.signal import lfilter
from statsmodels.genmod.families import Poisson
from statsmodels.genmod.generalized_linear_model import GLM
from statsmodels.tools.numdiff import approx_fprime
from statsmodels.tsa.statespace.tools import constrain_stationary_univariate
from statsmodels.tsa.stattools import adfuller, kpss

from .config_loader import ItsSection
from .inference import holm_sidak
from .panel import StudyDesign, aggregate_blocks

logger = logging.getLogger(__name__)

ItsSpec = Literal["level_only", "level_and_slope"]

WEEKDAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday")  # Sunday is the reference
MONTHS = (
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November",
)  # December is the reference
TREATMENT = "t"
SLOPE = "t_x_days"
MAX_ORDER = 5
MAX_DIFF = 2
MAX_NFEV_PER_PARAM = 200
NEAR_UNIT_ROOT = 1.01
KPSS_LEVEL = "5%"
ADF_LEVEL = 0.05
STEPWISE_START = ((2, 2), (0, 0), (1, 0), (0, 1))
SE_NOTE = (
    "Standard errors are conventional Wald errors from the observed information of the "
    "conditional likelihood; published tables with much larger errors are not reproduced."
)


class ItsError(ValueError):
    """ITS model cannot be specified or fitted."""


class ConvergenceError(ItsError):
    """Optimiser stopped before converging."""


@dataclass(frozen=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0 or self.p > MAX_ORDER or self.q > MAX_ORDER or self.d > MAX_DIFF:
            raise ItsError(f"invalid ARIMA order {self}: need 0 <= p, q <= {MAX_ORDER} and 0 <= d <= {MAX_DIFF}")

    def __str__(self) -> str:
        return f"({self.p},{self.d},{self.q})"


@dataclass(frozen=True)
class ItsDesignMatrix:
    dates: pd.DatetimeIndex
    X: pd.DataFrame
    t_int: date
    spec: ItsSpec
    dropped: Tuple[str, ...] = ()

    @property
    def columns(self) -> List[str]:
        return list(self.X.columns)


@dataclass(frozen=True)
class ItsFit:
    order: ArimaOrder
    params: pd.Series
    bse: pd.Series
    ar: np.ndarray
    ma: np.ndarray
    sigma2: float
    aic: float
    aicc: float
    r2: float
    adj_r2: float
    nobs: int
    family: str = "gaussian"
    near_unit_root: bool = False
    selection: Dict[Tuple[int, int, int], float] = field(default_factory=dict)

    @property
    def drift(self) -> Optional[float]:
        return float(self.params["drift"]) if "drift" in self.params.index else None

    @property
    def pvalues(self) -> pd.Series:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = self.params / self.bse
        p = 2.0 * stats.norm.sf(np.abs(z))
        # A zero standard error makes any non-zero coefficient certain.
        p = np.where(self.bse == 0, np.where(self.params == 0, 1.0, 0.0), p)
        return pd.Series(p, index=self.params.index)

    def _treatment(self, values: pd.Series) -> float:
        if TREATMENT not in values.index:
            raise ItsError(f"treatment column {TREATMENT!r} not in fit")
        return float(values[TREATMENT])

    @property
    def treatment_coef(self) -> float:
        return self._treatment(self.params)

    @property
    def treatment_se(self) -> float:
        return self._treatment(self.bse)

    @property
    def treatment_p(self) -> float:
        return self._treatment(self.pvalues)


@dataclass(frozen=True)
class ItsSettings:
    spec: ItsSpec = "level_only"
    max_p: int = MAX_ORDER
    max_q: int = MAX_ORDER
    max_d: int = MAX_DIFF
    extra_holidays: Tuple[date, ...] = ()
    year_effects: bool = True
    ar_lags: Tuple[int, ...] = (1,)

    @classmethod
    def from_config(cls, section: ItsSection) -> "ItsSettings":
        return cls(
            spec=section.spec,
            max_p=section.max_p,
            max_q=section.max_q,
            max_d=section.max_d,
            extra_holidays=tuple(section.extra_holidays),
            year_effects=section.year_effects,
            ar_lags=tuple(section.homicide.ar_lags),
        )


def holiday_dates(start: date, end: date, extra: Iterable[date] = ()) -> pd.DatetimeIndex:
    """US federal holidays plus New Year's Day, Halloween and ``extra``."""
    federal = USFederalHolidayCalendar().holidays(start=pd.Timestamp(start), end=pd.Timestamp(end))
    fixed = []
    for year in range(start.year, end.year + 1):
        fixed.extend([pd.Timestamp(year, 1, 1), pd.Timestamp(year, 10, 31)])
    days = federal.append(pd.DatetimeIndex(fixed)).append(pd.DatetimeIndex([pd.Timestamp(d) for d in extra]))
    days = days[(days >= pd.Timestamp(start)) & (days <= pd.Timestamp(end))]
    return days.unique().sort_values()


def _drop_collinear(columns: Dict[str, np.ndarray], first: Sequence[str]) -> Tuple[pd.DataFrame, Tuple[str, ...]]:
    """
    Keep columns greedily while they add rank, trying ``first`` before the
    rest; the kept columns stay in their original order.
    """
    names = list(columns)
    ordered = [n for n in first if n in columns] + [n for n in names if n not in first]
    kept: List[str] = []
    dropped: List[str] = []
    rank = 0
    for name in ordered:
        trial = np.column_stack([columns[n] for n in kept + [name]])
        new_rank = np.linalg.matrix_rank(trial)
        if new_rank > rank:
            kept.append(name)
            rank = new_rank
        else:
            dropped.append(name)
    kept_set = set(kept)
    frame = pd.DataFrame({n: columns[n] for n in names if n in kept_set})
    for name in dropped:
        if name.startswith("year_"):
            logger.warning(f"design column {name} is collinear with the treatment/calendar columns; dropped")
        else:
            logger.debug(f"design column {name} carries no rank; dropped")
    return frame, tuple(dropped)


def _check_daily(dates: pd.DatetimeIndex) -> pd.DatetimeIndex:
    dates = pd.DatetimeIndex(dates)
    if len(dates) < 2:
        raise ItsError("design needs at least 2 dates")
    expected = pd.date_range(dates[0], periods=len(dates), freq="D")
    if not dates.equals(expected):
        raise ItsError("dates must be contiguous daily")
    return dates


def _treatment_columns(dates: pd.DatetimeIndex, t_int: date, spec: ItsSpec) -> Dict[str, np.ndarray]:
    since = np.asarray((dates - pd.Timestamp(t_int)).days, dtype=float)
    post = (since > 0).astype(float)
    columns = {TREATMENT: post}
    if spec == "level_and_slope":
        columns[SLOPE] = post * since
    elif spec != "level_only":
        raise ItsError(f"unknown ITS spec {spec!r}")
    return columns


def build_design_matrix(dates: pd.DatetimeIndex, t_int: date, spec: ItsSpec = "level_only",
                        extra_holidays: Iterable[date] = (), year_effects: bool = True) -> ItsDesignMatrix:
    """
    Daily design: const, weekday and month dummies, year dummies, holiday,
    the treatment level 1(date > t_int) and, for ``level_and_slope``,
    1(date > t_int) * (date - t_int) in days.

    Columns without rank (absent months, a year dummy equal to the treatment
    indicator) are dropped; treatment columns are never dropped.
    """
    dates = _check_daily(dates)
    columns: Dict[str, np.ndarray] = {"const": np.ones(len(dates))}
    for i, name in enumerate(WEEKDAYS):
        columns[name] = (dates.dayofweek == i).astype(float)
    for i, name in enumerate(MONTHS, start=1):
        columns[name] = (dates.month == i).astype(float)
    if year_effects:
        for year in sorted(set(dates.year))[1:]:
            columns[f"year_{year}"] = (dates.year == year).astype(float)
    holidays = holiday_dates(dates[0].date(), dates[-1].date(), extra_holidays)
    columns["holiday"] = dates.isin(holidays).astype(float)
    treatment = _treatment_columns(dates, t_int, spec)
    columns.update(treatment)

    X, dropped = _drop_collinear(columns, first=["const", *treatment])
    X.index = dates
    return ItsDesignMatrix(dates, X, t_int, spec, dropped)


def difference_design(y: np.ndarray, X: pd.DataFrame, d: int) -> Tuple[np.ndarray, pd.DataFrame]:
    """
    Difference response and regressors d times. Columns that vanish are
    dropped; with d = 1 a differenced constant becomes a ``drift`` column.
    """
    y = np.asarray(y, dtype=float)
    if d == 0:
        return y, X.reset_index(drop=True)
    yd = np.diff(y, n=d)
    values = np.diff(X.to_numpy(dtype=float), n=d, axis=0)
    keep = [i for i in range(values.shape[1]) if np.any(np.abs(values[:, i]) > 1e-12)]
    Xd = pd.DataFrame(values[:, keep], columns=[X.columns[i] for i in keep])
    if d == 1 and "const" in X.columns:
        Xd.insert(0, "drift", 1.0)
    return yd, Xd


def _innovations(u: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Conditional innovations of ARMA errors, pre-sample innovations zero."""
    p = len(phi)
    n = len(u)
    v = u[p:].copy()
    for i in range(1, p + 1):
        v -= phi[i - 1] * u[p - i:n - i]
    if len(theta):
        v = lfilter([1.0], np.r_[1.0, theta], v)
    return v


def _min_root_modulus(coefs: np.ndarray, sign: float) -> float:
    if not len(coefs) or not np.any(coefs):
        return np.inf
    poly = np.r_[1.0, sign * coefs]
    roots = np.roots(poly[::-1])
    return float(np.min(np.abs(roots))) if len(roots) else np.inf


def _information_criteria(sse: float, n_eff: int, k: int) -> Tuple[float, float, float]:
    sigma2 = sse / n_eff
    with np.errstate(divide="ignore"):
        llf = -0.5 * n_eff * (np.log(2.0 * np.pi * sigma2) + 1.0)
    aic = -2.0 * llf + 2.0 * k
    aicc = aic + 2.0 * k * (k + 1) / (n_eff - k - 1) if n_eff - k - 1 > 0 else np.inf
    return sigma2, aic, aicc


def _r2(observed: np.ndarray, fitted: np.ndarray, n_params: int) -> Tuple[float, float]:
    if np.std(observed) == 0 or np.std(fitted) == 0:
        r2 = 1.0 if np.allclose(observed, fitted) else 0.0
    else:
        r2 = float(np.corrcoef(observed, fitted)[0, 1] ** 2)
    n = len(observed)
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - n_params - 1) if n - n_params - 1 > 0 else np.nan
    return r2, adj


def fit_arima_regression(y: np.ndarray, X: pd.DataFrame, order: ArimaOrder) -> ItsFit:
    """
    Regression with ARIMA(p, d, q) errors by conditional sum of squares.

    Response and regressors are differenced d times, then the regression
    coefficients and ARMA parameters jointly minimise the sum of squared
    conditional innovations. AR and MA coefficients are kept stationary and
    invertible through the partial-autocorrelation transform. Standard
    errors are sigma^2 (J'J)^-1 with J the innovation Jacobian.

    Raises:
        ItsError: series too short for the order and regressors
        ConvergenceError: optimiser hit its evaluation budget
    """
    y = np.asarray(y, dtype=float)
    if len(y) != len(X):
        raise ItsError(f"y has {len(y)} rows, X has {len(X)}")
    rank = int(np.linalg.matrix_rank(X.to_numpy(dtype=float))) if X.shape[1] else 0
    p, d, q = order.p, order.d, order.q
    if not len(y) > 10 * (p + q + rank):
        raise ItsError(f"ARIMA{order} with {rank} regressors needs more than {10 * (p + q + rank)} observations, got {len(y)}")

    yd, Xd = difference_design(y, X, d)
    names = list(Xd.columns)
    Xv = Xd.to_numpy(dtype=float)
    k = len(names)
    beta0 = np.linalg.lstsq(Xv, yd, rcond=None)[0] if k else np.zeros(0)

    def unpack(x):
        beta = x[:k]
        phi = constrain_stationary_univariate(x[k:k + p]) if p else np.zeros(0)
        theta = -constrain_stationary_univariate(x[k + p:]) if q else np.zeros(0)
        return beta, phi, theta

    def natural_residuals(nat):
        u = yd - Xv @ nat[:k] if k else yd.copy()
        return _innovations(u, nat[k:k + p], nat[k + p:])

    if p == 0 and q == 0:
        beta, phi, theta = beta0, np.zeros(0), np.zeros(0)
    else:
        x0 = np.r_[beta0, np.zeros(p + q)]
        n_params = len(x0)
        result = least_squares(
            lambda x: natural_residuals(np.concatenate(unpack(x))),
            x0, method="trf", x_scale="jac", max_nfev=MAX_NFEV_PER_PARAM * n_params,
        )
        if result.status <= 0:
            raise ConvergenceError(
                f"ARIMA{order} did not converge after {result.nfev} evaluations: {result.message}"
            )
        beta, phi, theta = unpack(result.x)

    nat = np.concatenate([beta, phi, theta])
    eps = natural_residuals(nat)
    n_eff = len(eps)
    sse = float(eps @ eps)
    sigma2, aic, aicc = _information_criteria(sse, n_eff, len(nat) + 1)

    if sigma2 > 0:
        J = approx_fprime(nat, natural_residuals, centered=True)
        J = np.asarray(J).reshape(n_eff, len(nat))
        cov = sigma2 * np.linalg.pinv(J.T @ J)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    else:
        se = np.zeros(len(nat))

    param_names = names + [f"AR({i})" for i in range(1, p + 1)] + [f"MA({i})" for i in range(1, q + 1)]
    observed = y[d + p:]
    r2, adj_r2 = _r2(observed, observed - eps, len(nat))
    near = min(_min_root_modulus(phi, -1.0), _min_root_modulus(theta, 1.0)) < NEAR_UNIT_ROOT
    if near:
        logger.warning(f"ARIMA{order}: AR or MA root within {NEAR_UNIT_ROOT} of the unit circle")

    return ItsFit(
        order=order,
        params=pd.Series(nat, index=param_names),
        bse=pd.Series(se, index=param_names),
        ar=phi,
        ma=theta,
        sigma2=sigma2,
        aic=aic,
        aicc=aicc,
        r2=r2,
        adj_r2=adj_r2,
        nobs=n_eff,
        near_unit_root=near,
    )


def _ols_residuals(y: np.ndarray, X: pd.DataFrame, d: int) -> np.ndarray:
    yd, Xd = difference_design(y, X, d)
    if Xd.shape[1] == 0:
        return yd - yd.mean()
    beta = np.linalg.lstsq(Xd.to_numpy(dtype=float), yd, rcond=None)[0]
    return yd - Xd.to_numpy(dtype=float) @ beta


def select_differencing(y: np.ndarray, X: pd.DataFrame, max_d: int = MAX_DIFF) -> int:
    """
    Smallest d whose differenced regression residuals are stationary.

    Stationarity is judged by a 5% KPSS level test confirmed by a 5% ADF
    unit-root test. Undifferenced residuals must pass both. Once differenced,
    passing either is enough, so a KPSS false rejection on already stationary
    differences does not add another difference.
    """
    for d in range(max_d + 1):
        resid = _ols_residuals(y, X, d)
        if np.allclose(resid, 0.0):
            return d
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            statistic, _, _, critical = kpss(resid, regression="c", nlags="auto")
        kpss_ok = not np.isfinite(statistic) or statistic < critical[KPSS_LEVEL]
        adf_p = _adf_pvalue(resid)
        logger.debug(f"d={d}: KPSS {statistic:.3f} (5% critical {critical[KPSS_LEVEL]:.3f}), ADF p {adf_p}")
        if adf_p is None:
            if kpss_ok:
                return d
            continue
        adf_ok = adf_p < ADF_LEVEL
        if (kpss_ok and adf_ok) or (d > 0 and (kpss_ok or adf_ok)):
            return d
    return max_d


def _adf_pvalue(resid: np.ndarray) -> Optional[float]:
    """ADF p-value with a constant and AIC lag choice, None when the series is too short."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return float(adfuller(resid, regression="c", autolag="AIC")[1])
    except (ValueError, np.linalg.LinAlgError):
        return None


def search_orders(y: np.ndarray, X: pd.DataFrame, max_p: int = MAX_ORDER, max_q: int = MAX_ORDER,
                  max_d: int = MAX_DIFF) -> Tuple[ArimaOrder, Dict[Tuple[int, int, int], float]]:
    """
    Stepwise AICc search over (p, q) after choosing d by KPSS.

    Returns the chosen order and the AICc of every candidate tried.
    """
    d = select_differencing(y, X, max_d)
    rank = int(np.linalg.matrix_rank(X.to_numpy(dtype=float))) if X.shape[1] else 0
    n = len(y)
    tried: Dict[Tuple[int, int, int], float] = {}

    def score(p, q):
        key = (p, d, q)
        if key in tried:
            return tried[key]
        if not (0 <= p <= max_p and 0 <= q <= max_q) or not n > 10 * (p + q + rank):
            return np.inf
        try:
            tried[key] = fit_arima_regression(y, X, ArimaOrder(p, d, q)).aicc
        except ItsError as e:
            logger.debug(f"ARIMA({p},{d},{q}) skipped: {e}")
            tried[key] = np.inf
        return tried[key]

    best, best_score = (0, 0), np.inf
    for p, q in STEPWISE_START:
        s = score(p, q)
        if s < best_score:
            best, best_score = (p, q), s

    while np.isfinite(best_score):
        p, q = best
        neighbours = [(p + dp, q + dq) for dp in (-1, 0, 1) for dq in (-1, 0, 1) if (dp, dq) != (0, 0)]
        improved = False
        for cand in neighbours:
            s = score(*cand)
            if s < best_score:
                best, best_score, improved = cand, s, True
        if not improved:
            break

    if not np.isfinite(best_score):
        logger.warning(f"no ARMA candidate could be fitted; falling back to (0,{d},0)")
        return ArimaOrder(0, d, 0), tried
    return ArimaOrder(best[0], d, best[1]), tried


def select_orders(y: np.ndarray, X: pd.DataFrame, max_p: int = MAX_ORDER, max_q: int = MAX_ORDER,
                  max_d: int = MAX_DIFF) -> ArimaOrder:
    return search_orders(y, X, max_p, max_q, max_d)[0]


def fit_its(daily: pd.Series, t_int: date, settings: ItsSettings = ItsSettings()) -> ItsFit:
    """Build the daily design, select the ARIMA order and fit."""
    design = build_design_matrix(daily.index, t_int, settings.spec, settings.extra_holidays, settings.year_effects)
    y = daily.to_numpy(dtype=float)
    order, tried = search_orders(y, design.X, settings.max_p, settings.max_q, settings.max_d)
    fit = fit_arima_regression(y, design.X, order)
    logger.info(f"ITS ARIMA{order}: treatment {fit.treatment_coef:.4g} (SE {fit.treatment_se:.3g}, "
                f"p {fit.treatment_p:.3g})")
    return _with_selection(fit, tried)


def _with_selection(fit: ItsFit, tried: Dict[Tuple[int, int, int], float]) -> ItsFit:
    return ItsFit(fit.order, fit.params, fit.bse, fit.ar, fit.ma, fit.sigma2, fit.aic, fit.aicc, fit.r2,
                  fit.adj_r2, fit.nobs, fit.family, fit.near_unit_root, dict(tried))


def weekly_counts(daily: pd.Series, intervention_date: date) -> pd.Series:
    """Weekly sums anchored so a week starts on the intervention date; partial weeks dropped."""
    design = StudyDesign(daily.index[0].date(), intervention_date, daily.index[-1].date(), 7, "its")
    blocks = aggregate_blocks(daily, design, min_pre_blocks=1, unit="its")
    return pd.Series(blocks.counts, index=blocks.block_starts)


def build_weekly_design_matrix(week_starts: pd.DatetimeIndex, t_int: date,
                               spec: ItsSpec = "level_only") -> ItsDesignMatrix:
    """Weekly design: const, month dummies and treatment columns."""
    week_starts = pd.DatetimeIndex(week_starts)
    columns: Dict[str, np.ndarray] = {"const": np.ones(len(week_starts))}
    for i, name in enumerate(MONTHS, start=1):
        columns[name] = (week_starts.month == i).astype(float)
    treatment = _treatment_columns(week_starts, t_int, spec)
    columns.update(treatment)
    X, dropped = _drop_collinear(columns, first=["const", *treatment])
    X.index = week_starts
    return ItsDesignMatrix(week_starts, X, t_int, spec, dropped)


def fit_poisson_ar(y: np.ndarray, X: pd.DataFrame, ar_lags: Sequence[int] = (1,)) -> ItsFit:
    """
    Poisson log-link regression with log1p lagged counts as extra
    regressors, fitted by IRLS to a 1e-8 tolerance.

    Raises:
        ItsError: negative, non-integer or all-zero counts, or a fit that
            diverges or does not converge
    """
    y = np.asarray(y, dtype=float)
    if len(y) != len(X):
        raise ItsError(f"y has {len(y)} rows, X has {len(X)}")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ItsError("Poisson outcome must be non-negative integers")
    if not np.any(y > 0):
        raise ItsError("Poisson outcome is all zeros; the likelihood has no finite maximum")
    lags = sorted(set(int(l) for l in ar_lags))
    if any(l < 1 for l in lags):
        raise ItsError(f"lags must be positive, got {lags}")
    start = max(lags) if lags else 0

    design = X.reset_index(drop=True).iloc[start:].copy()
    for lag in lags:
        design[f"lag_{lag}"] = np.log1p(y[start - lag:len(y) - lag])
    response = y[start:]

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            result = GLM(response, design, family=Poisson()).fit(tol=1e-8, maxiter=100)
        except (ValueError, np.linalg.LinAlgError) as e:
            raise ItsError(f"Poisson fit failed: {e}")
    separation = [w for w in caught if "separation" in str(w.message).lower()]
    if separation:
        raise ItsError(f"Poisson fit diverged: {separation[0].message}")
    if not getattr(result, "converged", True) or not np.all(np.isfinite(result.params)):
        raise ItsError("Poisson IRLS did not converge")

    fitted = np.asarray(result.fittedvalues)
    k = len(result.params)
    n = len(response)
    aicc = result.aic + 2.0 * k * (k + 1) / (n - k - 1) if n - k - 1 > 0 else np.inf
    r2, adj_r2 = _r2(response, fitted, k)
    return ItsFit(
        order=ArimaOrder(0, 0, 0),
        params=pd.Series(np.asarray(result.params), index=list(design.columns)),
        bse=pd.Series(np.asarray(result.bse), index=list(design.columns)),
        ar=np.zeros(0),
        ma=np.zeros(0),
        sigma2=float(result.scale),
        aic=float(result.aic),
        aicc=float(aicc),
        r2=r2,
        adj_r2=adj_r2,
        nobs=n,
        family="poisson",
    )


def fit_its_poisson(daily: pd.Series, intervention_date: date, settings: ItsSettings = ItsSettings()) -> ItsFit:
    """Weekly Poisson AR fit for a sparse daily series."""
    weekly = weekly_counts(daily, intervention_date)
    design = build_weekly_design_matrix(weekly.index, intervention_date - timedelta(days=1), settings.spec)
    return fit_poisson_ar(weekly.to_numpy(), design.X, settings.ar_lags)


def its_report(fits: Mapping[str, ItsFit], alpha: float = 0.05) -> pd.DataFrame:
    """Treatment coefficient, SE, p-value and Holm-Sidak adjusted p per outcome."""
    if not fits:
        raise ItsError("no ITS fits to report")
    raw = {name: fit.treatment_p for name, fit in fits.items()}
    adjusted = holm_sidak(raw, alpha)
    rows = []
    for name, fit in fits.items():
        rows.append({
            "outcome": name,
            "order": str(fit.order),
            "family": fit.family,
            "coef": fit.treatment_coef,
            "se": fit.treatment_se,
            "p": raw[name],
            "adjusted_p": adjusted.adjusted[name],
            "decision": adjusted.decisions[name].value,
        })
    return pd.DataFrame(rows)


def _row_rank(name: str) -> Tuple[int, int, str]:
    if name.startswith("AR("):
        return 0, int(name[3:-1]), name
    if name.startswith("MA("):
        return 1, int(name[3:-1]), name
    fixed = ["drift", "const", TREATMENT, SLOPE]
    if name in fixed:
        return 2, fixed.index(name), name
    if name in WEEKDAYS:
        return 3, WEEKDAYS.index(name), name
    if name in MONTHS:
        return 4, MONTHS.index(name), name
    if name.startswith("year_"):
        return 5, 0, name
    if name == "holiday":
        return 6, 0, name
    return 7, 0, name


def coefficient_table(fits: Mapping[str, ItsFit]) -> pd.DataFrame:
    """Coefficients and standard errors, one row per term and two columns per outcome."""
    names = sorted({n for fit in fits.values() for n in fit.params.index}, key=_row_rank)
    table = pd.DataFrame(index=pd.Index(names, name="term"))
    for outcome, fit in fits.items():
        table[outcome] = fit.params.reindex(names)
        table[f"{outcome}_se"] = fit.bse.reindex(names)
    return table
