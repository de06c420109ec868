"""
Placebo-based inference for synthetic control fits.

Unit placebos relabel each donor as treated and refit; the retained placebo
statistics form the null distribution for empirical p-values and effect
bounds. In-time placebos and early roll-in re-run the same pipeline with a
moved intervention date.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import date, timedelta
from enum import Enum
from typing import Dict, Literal, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .config_loader import InferenceSection
from .panel import DailyPanel, Panel, PanelError, StudyDesign, build_panel
from .synth import EffectEstimate, SynthFit, SynthSettings, fit_synthetic_control

logger = logging.getLogger(__name__)

Sidedness = Literal["one_sided_upper", "two_sided"]

MAX_HYPOTHESES = 64
SCREEN_ATOL = 1e-12


class InferenceError(ValueError):
    """No valid inference can be drawn."""


class Decision(str, Enum):
    REJECT = "Reject"
    FAIL_TO_REJECT = "FailToReject"


@dataclass(frozen=True)
class InferenceSettings:
    screening_factor: float = 7.5
    sidedness: Sidedness = "one_sided_upper"
    include_treated_in_pool: bool = False
    bound_percentiles: Tuple[float, float] = (5.0, 95.0)
    threads: int = 1

    @classmethod
    def from_config(cls, section: InferenceSection, threads: int = 1) -> "InferenceSettings":
        return cls(
            screening_factor=section.screening_factor,
            sidedness=section.sidedness,
            include_treated_in_pool=section.include_treated_in_placebo_pool,
            bound_percentiles=tuple(section.bound_percentiles),
            threads=threads,
        )


@dataclass(frozen=True)
class PlaceboEntry:
    unit: str
    pre_rmse: float
    ate: float
    rmse_ratio: float
    screened: bool
    lambda_: float
    residuals: np.ndarray


@dataclass(frozen=True)
class PlaceboDistribution:
    entries: Tuple[PlaceboEntry, ...]
    screening_factor: float
    treated_stats: EffectEstimate

    @property
    def retained(self) -> Tuple[PlaceboEntry, ...]:
        return tuple(e for e in self.entries if not e.screened)

    @property
    def n_retained(self) -> int:
        return len(self.retained)

    def retained_ates(self) -> np.ndarray:
        return np.array([e.ate for e in self.retained], dtype=float)

    def retained_ratios(self) -> np.ndarray:
        return np.array([e.rmse_ratio for e in self.retained], dtype=float)


@dataclass(frozen=True)
class TestReport:
    p_ate: float
    p_rmse: float
    sidedness: Sidedness
    bounds: Tuple[float, float]
    avg_placebo_pre_rmse: float
    n_retained: int
    effect: EffectEstimate
    pre_r2: float
    label: str = "main"


@dataclass(frozen=True)
class AdjustedPValues:
    raw: Dict[str, float]
    adjusted: Dict[str, float]
    decisions: Dict[str, Decision]
    alpha: float


@dataclass(frozen=True)
class PanelAnalysis:
    """A treated fit together with its placebo distribution and test report."""

    fit: SynthFit
    placebos: PlaceboDistribution
    report: TestReport


def _placebo_fit(panel: Panel, unit: str, exclude: Tuple[str, ...], settings: SynthSettings) -> Tuple[str, SynthFit]:
    return unit, fit_synthetic_control(panel.for_treated(unit, exclude), settings)


def unit_placebos(
    panel: Panel,
    synth_settings: SynthSettings = SynthSettings(),
    screening_factor: float = 7.5,
    include_treated_in_pool: bool = False,
    threads: int = 1,
    treated_fit: Optional[SynthFit] = None,
) -> PlaceboDistribution:
    """
    Refit with every donor relabelled as treated.

    A placebo is screened out when its pre-period RMSE exceeds
    ``screening_factor`` times the treated fit's (plus a floating-point
    tolerance scaled to the data). Entries are sorted by unit id.

    Raises:
        InferenceError: fewer than 3 donors, or every placebo screened out
    """
    if len(panel.donors) < 3:
        raise InferenceError(f"{panel.outcome}: unit placebos need at least 3 donors, got {len(panel.donors)}")
    if treated_fit is None:
        treated_fit = fit_synthetic_control(panel, synth_settings)
    treated_pre_rmse = treated_fit.solution.pre_rmse
    exclude = () if include_treated_in_pool else (panel.treated_unit,)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(_placebo_fit, panel, unit, exclude, synth_settings) for unit in panel.donors]
        fits = dict(f.result() for f in futures)

    atol = SCREEN_ATOL * float(np.max(np.abs(panel.Y)))
    threshold = screening_factor * treated_pre_rmse + atol
    entries = []
    for unit in sorted(fits):
        fit = fits[unit]
        entries.append(PlaceboEntry(
            unit=unit,
            pre_rmse=fit.solution.pre_rmse,
            ate=fit.effect.ate_per_capita,
            rmse_ratio=fit.effect.rmse_ratio,
            screened=fit.solution.pre_rmse > threshold,
            lambda_=fit.solution.lambda_,
            residuals=fit.counterfactual.residuals,
        ))
    dist = PlaceboDistribution(tuple(entries), screening_factor, treated_fit.effect)
    if dist.n_retained == 0:
        raise InferenceError(
            f"{panel.outcome}: all {len(entries)} placebos screened out "
            f"(pre-RMSE > {screening_factor} x {treated_pre_rmse:.3g})"
        )
    logger.info(f"{panel.outcome}: {dist.n_retained}/{len(entries)} placebos retained")
    return dist


def p_value_ate(dist: PlaceboDistribution, tau_hat: float, sidedness: Sidedness = "one_sided_upper") -> float:
    """Share of retained placebo ATEs at least as extreme as ``tau_hat``."""
    ates = dist.retained_ates()
    if len(ates) == 0:
        raise InferenceError("no retained placebos")
    if sidedness == "two_sided":
        hits = np.abs(ates) >= abs(tau_hat)
    elif sidedness == "one_sided_upper":
        hits = ates >= tau_hat
    else:
        raise InferenceError(f"unknown sidedness {sidedness!r}")
    return float(np.count_nonzero(hits)) / len(ates)


def p_value_rmse(dist: PlaceboDistribution, r_treated: float) -> float:
    """Share of retained placebo RMSE ratios >= the treated ratio."""
    ratios = dist.retained_ratios()
    if len(ratios) == 0:
        raise InferenceError("no retained placebos")
    return float(np.count_nonzero(ratios >= r_treated)) / len(ratios)


def effect_bounds(dist: PlaceboDistribution, low_pct: float = 5.0, high_pct: float = 95.0) -> Tuple[float, float]:
    """Percentiles of the retained placebo ATEs, linearly interpolated."""
    ates = dist.retained_ates()
    if len(ates) == 0:
        raise InferenceError("no retained placebos")
    low, high = np.percentile(ates, [low_pct, high_pct])
    return float(low), float(high)


def holm_sidak(raw: Mapping[str, float], alpha: float = 0.1) -> AdjustedPValues:
    """
    Holm step-down adjustment with Sidak per-step factors.

    The i-th smallest p-value (1-based) is adjusted to
    max_{k<=i} 1 - (1 - p_(k))^(m-k+1). Ties sort by key so the result does
    not depend on input order.

    Raises:
        InferenceError: no hypotheses, more than 64, or p outside [0, 1]
    """
    m = len(raw)
    if not 1 <= m <= MAX_HYPOTHESES:
        raise InferenceError(f"holm_sidak needs 1..{MAX_HYPOTHESES} hypotheses, got {m}")
    bad = {k: p for k, p in raw.items() if not 0.0 <= p <= 1.0}
    if bad:
        raise InferenceError(f"p-values outside [0, 1]: {bad}")

    ordered = sorted(raw, key=lambda k: (raw[k], k))
    adjusted: Dict[str, float] = {}
    running = 0.0
    for i, key in enumerate(ordered):
        step = 1.0 - (1.0 - raw[key]) ** (m - i)
        running = min(1.0, max(running, step, 0.0))
        adjusted[key] = running
    adjusted = {k: adjusted[k] for k in raw}
    decisions = {k: Decision.REJECT if adjusted[k] <= alpha else Decision.FAIL_TO_REJECT for k in raw}
    return AdjustedPValues(dict(raw), adjusted, decisions, alpha)


def summarize(dist: PlaceboDistribution, sidedness: Sidedness = "one_sided_upper", low_pct: float = 5.0,
              high_pct: float = 95.0, pre_r2: float = float("nan"), label: str = "main") -> TestReport:
    """Collect p-values, bounds and placebo fit quality into a TestReport."""
    effect = dist.treated_stats
    retained = dist.retained
    return TestReport(
        p_ate=p_value_ate(dist, effect.ate_per_capita, sidedness),
        p_rmse=p_value_rmse(dist, effect.rmse_ratio),
        sidedness=sidedness,
        bounds=effect_bounds(dist, low_pct, high_pct),
        avg_placebo_pre_rmse=float(np.mean([e.pre_rmse for e in retained])),
        n_retained=len(retained),
        effect=effect,
        pre_r2=pre_r2,
        label=label,
    )


def analyze_panel(panel: Panel, synth_settings: SynthSettings = SynthSettings(),
                  settings: InferenceSettings = InferenceSettings(), label: str = "main") -> PanelAnalysis:
    """Treated fit, unit placebos and summary for one panel."""
    fit = fit_synthetic_control(panel, synth_settings)
    dist = unit_placebos(
        panel, synth_settings, settings.screening_factor, settings.include_treated_in_pool,
        settings.threads, treated_fit=fit,
    )
    low, high = settings.bound_percentiles
    report = summarize(dist, settings.sidedness, low, high, fit.solution.pre_r2, label)
    return PanelAnalysis(fit, dist, report)


def _blocks_before(panel: Panel, when: date) -> int:
    return int(np.count_nonzero(panel.block_starts < pd.Timestamp(when)))


def _true_start(source: Union[Panel, DailyPanel], design: Optional[StudyDesign]) -> date:
    if design is not None:
        return design.intervention_date
    if isinstance(source, DailyPanel):
        raise InferenceError("a StudyDesign is required to re-block daily counts")
    return source.intervention_block_start.date()


def _retimed_panel(source: Union[Panel, DailyPanel], design: Optional[StudyDesign], new_start: date,
                   truncate: bool) -> Panel:
    if isinstance(source, DailyPanel):
        if not new_start <= design.intervention_date:
            raise InferenceError(f"new intervention {new_start} is after {design.intervention_date}")
        if truncate:
            moved = replace(design, intervention_date=new_start,
                            window_end=design.intervention_date - timedelta(days=1))
        else:
            moved = replace(design, intervention_date=new_start)
        try:
            return build_panel(source, moved)
        except PanelError as e:
            raise InferenceError(f"{source.outcome} @ {new_start}: {e}") from e

    T0 = _blocks_before(source, new_start)
    if T0 > source.T0:
        raise InferenceError(f"{source.outcome}: {new_start} is after the intervention block")
    T = source.T0 if truncate else source.T
    if T0 < 8:
        raise InferenceError(f"{source.outcome} @ {new_start}: {T0} pre blocks, need at least 8")
    if T0 >= T:
        raise InferenceError(f"{source.outcome} @ {new_start}: no blocks between the new and true intervention")
    return source.retime(T0, T)


def in_time_placebo(source: Union[Panel, DailyPanel], design: Optional[StudyDesign], pseudo_intervention: date,
                    synth_settings: SynthSettings = SynthSettings(),
                    settings: InferenceSettings = InferenceSettings()) -> TestReport:
    """
    Move the intervention to ``pseudo_intervention`` and drop the true
    post-period, so [pseudo, true) becomes the pseudo post-period; then run
    the full fit and placebo pipeline.

    Raises:
        InferenceError: pseudo date not before the intervention, or fewer
            than 8 pre blocks remain
    """
    true_start = _true_start(source, design)
    if not pseudo_intervention < true_start:
        raise InferenceError(f"pseudo intervention {pseudo_intervention} must precede {true_start}")
    panel = _retimed_panel(source, design, pseudo_intervention, truncate=True)
    logger.info(f"{panel.outcome}: in-time placebo @ {pseudo_intervention} (T0={panel.T0}, T={panel.T})")
    return analyze_panel(panel, synth_settings, settings, label=f"in_time {pseudo_intervention}").report


def early_rollin(source: Union[Panel, DailyPanel], design: Optional[StudyDesign], early_start: date,
                 synth_settings: SynthSettings = SynthSettings(),
                 settings: InferenceSettings = InferenceSettings()) -> TestReport:
    """
    Keep the full window but start the post-period at ``early_start``.

    An ``early_start`` equal to the intervention date reproduces the main
    analysis.
    """
    true_start = _true_start(source, design)
    if early_start > true_start:
        raise InferenceError(f"early start {early_start} is after the intervention {true_start}")
    panel = _retimed_panel(source, design, early_start, truncate=False)
    logger.info(f"{panel.outcome}: early roll-in @ {early_start} (T0={panel.T0}, T={panel.T})")
    return analyze_panel(panel, synth_settings, settings, label=f"early_rollin {early_start}").report
