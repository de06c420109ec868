"""
Report tables and the output bundle.

Machine-readable CSVs carry full precision in per-1000 units; the summary
text file uses display rounding (4 decimals for per-1000 effects, 2 for
weights and p-values).
"""

import io
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from .inference import AdjustedPValues, PanelAnalysis, TestReport, holm_sidak
from .smoothing import LOESS_DEGREE, LOESS_KERNEL, loess_smooth
from .synth import PER_1000, PenaltyScaling, SynthFit, to_events
from .utils import sha256_file, write_frame, write_json

logger = logging.getLogger(__name__)

MAIN_COLUMNS = ["ATE(/1000)", "p(ATE)", "p(RMSE)", "Pre R²", "Pre RMSE", "Plac. RMSE", "Num. plac."]
MANIFEST = "manifest.json"


@dataclass
class OutcomeResult:
    outcome: str
    analysis: PanelAnalysis
    in_time: List[Tuple[date, TestReport]] = field(default_factory=list)
    early_rollin: List[Tuple[date, TestReport]] = field(default_factory=list)

    @property
    def population(self) -> float:
        return self.analysis.fit.panel.populations[0]


def main_table(results: Sequence[OutcomeResult]) -> pd.DataFrame:
    rows = {}
    for result in results:
        report = result.analysis.report
        rows[result.outcome] = [
            report.effect.ate_per_1000,
            report.p_ate,
            report.p_rmse,
            report.pre_r2,
            report.effect.pre_rmse,
            report.avg_placebo_pre_rmse,
            report.n_retained,
        ]
    frame = pd.DataFrame.from_dict(rows, orient="index", columns=MAIN_COLUMNS)
    frame["Num. plac."] = frame["Num. plac."].astype(int)
    frame.index.name = "outcome"
    return frame


def bounds_table(results: Sequence[OutcomeResult], percentiles: Tuple[float, float]) -> pd.DataFrame:
    rows = []
    for result in results:
        report = result.analysis.report
        low, high = report.bounds
        pop = result.population
        rows.append({
            "outcome": result.outcome,
            "low_pct": percentiles[0],
            "high_pct": percentiles[1],
            "ATE(/1000)": report.effect.ate_per_1000,
            "Lower(/1000)": PER_1000 * low,
            "Upper(/1000)": PER_1000 * high,
            "ATE events": to_events(report.effect.ate_per_capita, pop),
            "Lower events": to_events(low, pop),
            "Upper events": to_events(high, pop),
        })
    columns = ["outcome", "low_pct", "high_pct", "ATE(/1000)", "Lower(/1000)", "Upper(/1000)",
               "ATE events", "Lower events", "Upper events"]
    return pd.DataFrame(rows, columns=columns).set_index("outcome")


def adjust_outcomes(results: Sequence[OutcomeResult], alpha: float) -> Tuple[AdjustedPValues, AdjustedPValues]:
    """Holm-Sidak across outcomes, separately for the ATE and RMSE-ratio p-values."""
    ate = holm_sidak({r.outcome: r.analysis.report.p_ate for r in results}, alpha)
    rmse = holm_sidak({r.outcome: r.analysis.report.p_rmse for r in results}, alpha)
    return ate, rmse


def adjusted_table(ate: AdjustedPValues, rmse: AdjustedPValues) -> pd.DataFrame:
    frame = pd.DataFrame({
        "p(ATE)": pd.Series(ate.raw),
        "Adjusted p (ATE)": pd.Series(ate.adjusted),
        "Decision (ATE)": pd.Series({k: v.value for k, v in ate.decisions.items()}),
        "p(RMSE)": pd.Series(rmse.raw),
        "Adjusted p (RMSE)": pd.Series(rmse.adjusted),
        "Decision (RMSE)": pd.Series({k: v.value for k, v in rmse.decisions.items()}),
    })
    frame["alpha"] = ate.alpha
    frame.index.name = "outcome"
    return frame


def weights_tables(fits: Mapping[str, SynthFit],
                   penalty_scaling: PenaltyScaling = "relative") -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Donor weights plus intercept per outcome: (display, full precision).

    The full table also carries the tuned lambda, labelled with its scaling
    (``lambda_relative`` or ``lambda_absolute``), the effective ridge
    coefficient ``penalty`` and the validation RMSE.
    """
    label = f"lambda_{penalty_scaling}"
    extra = [label, "penalty", "validation_rmse"]
    donors = sorted({d for fit in fits.values() for d in fit.solution.donors})
    full = pd.DataFrame(index=pd.Index(donors + ["intercept", *extra], name="unit"))
    for outcome, fit in fits.items():
        solution = fit.solution
        column = pd.Series(dict(zip(solution.donors, solution.weights)), dtype=float)
        column["intercept"] = solution.intercept
        column[label] = solution.lambda_
        column["penalty"] = solution.penalty
        column["validation_rmse"] = np.nan if solution.validation_rmse is None else solution.validation_rmse
        full[outcome] = column.reindex(full.index)
    display = full.drop(index=extra).round(2)
    return display, full


def placebo_date_table(results: Sequence[OutcomeResult], kind: str) -> pd.DataFrame:
    rows = []
    for result in results:
        for when, report in getattr(result, kind):
            rows.append({
                "outcome": result.outcome,
                "date": when.isoformat(),
                "ATE(/1000)": report.effect.ate_per_1000,
                "p(ATE)": report.p_ate,
                "p(RMSE)": report.p_rmse,
                "Num. plac.": report.n_retained,
            })
    columns = ["outcome", "date", "ATE(/1000)", "p(ATE)", "p(RMSE)", "Num. plac."]
    return pd.DataFrame(rows, columns=columns)


def placebo_units_table(results: Sequence[OutcomeResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        for entry in result.analysis.placebos.entries:
            rows.append({
                "outcome": result.outcome,
                "unit": entry.unit,
                "pre_rmse": entry.pre_rmse,
                "ate_per_capita": entry.ate,
                "ATE(/1000)": PER_1000 * entry.ate,
                "rmse_ratio": entry.rmse_ratio,
                "lambda": entry.lambda_,
                "screened": bool(entry.screened),
            })
    columns = ["outcome", "unit", "pre_rmse", "ate_per_capita", "ATE(/1000)", "rmse_ratio", "lambda", "screened"]
    return pd.DataFrame(rows, columns=columns)


def series_frame(fit: SynthFit, span: float) -> pd.DataFrame:
    """Observed and synthetic series per block (per 1000) with loess display columns."""
    cf = fit.counterfactual
    observed = PER_1000 * cf.observed
    predicted = PER_1000 * cf.predicted
    frame = pd.DataFrame({
        "block_start": fit.panel.block_starts.strftime("%Y-%m-%d"),
        "post": np.arange(len(observed)) >= cf.T0,
        "observed": observed,
        "predicted": predicted,
        "residual": observed - predicted,
        "observed_smooth": loess_smooth(observed, span),
        "predicted_smooth": loess_smooth(predicted, span),
    })
    return frame


def placebo_residuals_frame(result: OutcomeResult, span: float) -> pd.DataFrame:
    """Treated and placebo residuals per block (per 1000), raw and smoothed."""
    fit = result.analysis.fit
    frame = pd.DataFrame({"block_start": fit.panel.block_starts.strftime("%Y-%m-%d")})
    series = {fit.panel.treated_unit: fit.counterfactual.residuals}
    for entry in result.analysis.placebos.entries:
        series[entry.unit] = entry.residuals
    for unit, resid in series.items():
        frame[unit] = PER_1000 * resid
    for unit in series:
        frame[f"{unit}_smooth"] = loess_smooth(frame[unit].to_numpy(), span)
    return frame


def _fmt(value: float, digits: int) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return f"{value:.{digits}f}"


def render_summary(results: Sequence[OutcomeResult], adjusted: Optional[Tuple[AdjustedPValues, AdjustedPValues]],
                   its_table: Optional[pd.DataFrame] = None, its_note: Optional[str] = None) -> str:
    """Human-readable tables with display rounding."""
    console = Console(record=True, width=120, file=io.StringIO(), color_system=None)

    table = Table(title="Synthetic control (per 1000)")
    table.add_column("Outcome", style="cyan")
    for name in MAIN_COLUMNS:
        table.add_column(name, justify="right")
    table.add_column("ATE events", justify="right")
    for r in results:
        rep = r.analysis.report
        table.add_row(
            r.outcome, _fmt(rep.effect.ate_per_1000, 4), _fmt(rep.p_ate, 2), _fmt(rep.p_rmse, 2),
            _fmt(rep.pre_r2, 2), f"{rep.effect.pre_rmse:.3g}", f"{rep.avg_placebo_pre_rmse:.3g}",
            str(rep.n_retained), _fmt(to_events(rep.effect.ate_per_capita, r.population), 1),
        )
    console.print(table)

    if adjusted is not None:
        ate, rmse = adjusted
        adj = Table(title=f"Holm-Sidak adjusted p-values (alpha={ate.alpha})")
        for name in ("Outcome", "p(ATE)", "Adjusted", "Decision", "p(RMSE)", "Adjusted", "Decision"):
            adj.add_column(name)
        for key in ate.raw:
            adj.add_row(key, _fmt(ate.raw[key], 2), _fmt(ate.adjusted[key], 2), ate.decisions[key].value,
                        _fmt(rmse.raw[key], 2), _fmt(rmse.adjusted[key], 2), rmse.decisions[key].value)
        console.print(adj)

    weights, _ = weights_tables({r.outcome: r.analysis.fit for r in results}) if results else (None, None)
    if weights is not None and len(weights.columns):
        wt = Table(title="Donor weights")
        wt.add_column("Unit", style="cyan")
        for outcome in weights.columns:
            wt.add_column(outcome, justify="right")
        for unit, row in weights.iterrows():
            wt.add_row(unit, *[_fmt(v, 2) for v in row])
        console.print(wt)

    if its_table is not None and len(its_table):
        it = Table(title="Interrupted time series: treatment coefficients")
        for name in ("Outcome", "Order", "Coef", "SE", "p", "Adjusted p", "Decision"):
            it.add_column(name)
        for _, row in its_table.iterrows():
            it.add_row(row["outcome"], row["order"], f"{row['coef']:.4g}", f"{row['se']:.4g}",
                       _fmt(row["p"], 4), _fmt(row["adjusted_p"], 4), row["decision"])
        console.print(it)
        if its_note:
            console.print(its_note)

    return console.export_text()


class ReportWriter:
    """Writes bundle files into one directory and records them for the manifest."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.files: List[str] = []

    def _record(self, path: Path) -> Path:
        name = path.relative_to(self.out_dir).as_posix()
        if name not in self.files:
            self.files.append(name)
        logger.debug(f"wrote {path}")
        return path

    def frame(self, name: str, frame: pd.DataFrame, index: bool = True, float_format: Optional[str] = None) -> Path:
        kwargs = {"float_format": float_format} if float_format else {}
        return self._record(write_frame(frame, self.out_dir / name, index=index, **kwargs))

    def text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        return self._record(path)

    def adopt(self, path: Path) -> Path:
        """Record a file written by another writer."""
        return self._record(Path(path))

    def manifest(self, complete: bool, outcomes: Dict[str, str], failures: List[str],
                 extra: Optional[dict] = None) -> Path:
        """Write manifest.json last: sorted files with SHA-256 digests."""
        data = {
            "complete": complete,
            "outcomes": dict(sorted(outcomes.items())),
            "failures": failures,
            "files": {name: sha256_file(self.out_dir / name) for name in sorted(self.files)},
            "loess": {"degree": LOESS_DEGREE, "kernel": LOESS_KERNEL, "robustness_iterations": 0},
        }
        data.update(extra or {})
        return write_json(data, self.out_dir / MANIFEST)
