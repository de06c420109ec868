"""
Batch command line for crimesynth.

Verbs: ingest, panel, fit, placebo, its, run, gen. Every verb reads one YAML
run configuration; nothing is computed before it validates.
"""

import argparse
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd
from pydantic import ValidationError

from .config_loader import ConfigLoader, RunConfig, configure_logging, format_validation_error
from .datagen import FactorModelSpec, generate_panel
from .inference import InferenceSettings, analyze_panel, early_rollin, in_time_placebo
from .ingest import (
    IngestAudit,
    counts_from_frame,
    counts_to_frame,
    ingest_files,
    load_category_map,
    outcome_categories,
    screen_discontinuities,
)
from .its import SE_NOTE, ItsFit, ItsSettings, coefficient_table, fit_its, fit_its_poisson, its_report
from .panel import DailyPanel, Panel, StudyDesign, build_panel, read_panel, write_panel
from .reports import (
    OutcomeResult,
    ReportWriter,
    adjust_outcomes,
    adjusted_table,
    bounds_table,
    main_table,
    placebo_date_table,
    placebo_residuals_frame,
    placebo_units_table,
    render_summary,
    series_frame,
    weights_tables,
)
from .synth import DEFAULT_NYC_POPULATION, SynthFit, SynthSettings, fit_synthetic_control
from .utils import write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

Source = Union[Panel, DailyPanel]


@dataclass
class Sources:
    """Per-outcome inputs: a prebuilt Panel, or daily counts plus their design."""

    outcomes: Dict[str, Source] = field(default_factory=dict)
    designs: Dict[str, StudyDesign] = field(default_factory=dict)
    counts: Optional[dict] = None
    audit: Optional[IngestAudit] = None


@dataclass
class ReportBundle:
    out_dir: Path
    files: List[str]
    results: Dict[str, OutcomeResult]
    failures: List[str]
    complete: bool
    its_table: Optional[pd.DataFrame] = None


def ingest_window(config: RunConfig) -> Tuple[date, date]:
    """Study window, extended back to the ITS window start when ITS is enabled."""
    start = config.study.window_start
    if config.its.enabled:
        start = min(start, config.its.window_start)
    return start, config.study.window_end


def load_counts(config: RunConfig, threads: int) -> Tuple[dict, IngestAudit]:
    """Daily counts from incident files (or a daily-counts CSV) with discontinuity screening."""
    inputs = config.inputs
    if inputs.daily_counts is not None:
        counts = counts_from_frame(pd.read_csv(inputs.daily_counts, dtype={"city": str, "category": str}))
        audit = IngestAudit()
    else:
        category_map = load_category_map(inputs.category_map, inputs.vocabulary)
        files = [(f.path, f.schema_) for f in inputs.incident_files]
        counts, audit = ingest_files(files, category_map, ingest_window(config), threads)
    categories = outcome_categories(config.outcomes) if config.outcomes else None
    flagged = screen_discontinuities(
        counts, config.ingest.discontinuity_threshold, audit, categories, config.ingest.discontinuity_min_mean,
    )
    if flagged:
        action = "dropping" if config.ingest.drop_flagged else "keeping"
        logger.warning(f"reporting discontinuities in {flagged}; {action} them")
    audit.discontinuities["flagged_cities"] = flagged
    return counts, audit


def _excluded(config: RunConfig, audit: Optional[IngestAudit]) -> set:
    excluded = set(config.study.exclude_units)
    if audit is not None and config.ingest.drop_flagged:
        excluded |= set(audit.discontinuities.get("flagged_cities", []))
    return excluded


def design_for(config: RunConfig, outcome: str, excluded: set = frozenset()) -> StudyDesign:
    study = config.study
    if study.treated_unit in excluded:
        raise ValueError(f"treated unit {study.treated_unit!r} is excluded")
    populations = {u: p for u, p in study.populations.items() if u not in excluded}
    if study.treated_unit == "NYC":
        populations.setdefault("NYC", float(DEFAULT_NYC_POPULATION))
    return StudyDesign(
        window_start=study.window_start,
        intervention_date=study.intervention_date,
        window_end=study.window_end,
        block_len_days=config.block_len_for(outcome),
        treated_unit=study.treated_unit,
        populations=populations,
    )


def load_sources(config: RunConfig, threads: int, seed: Optional[int] = None) -> Sources:
    sources = Sources()
    for outcome, path in sorted(config.inputs.panels.items()):
        sources.outcomes[outcome] = read_panel(path)
    if config.datagen is not None:
        panel, _ = generate_panel(FactorModelSpec.from_config(config.datagen, seed))
        if panel.outcome in sources.outcomes:
            raise ValueError(f"outcome {panel.outcome!r} configured twice")
        sources.outcomes[panel.outcome] = panel
    if config.inputs.incident_files or config.inputs.daily_counts:
        sources.counts, sources.audit = load_counts(config, threads)
        excluded = _excluded(config, sources.audit)
        for outcome in sorted(config.outcomes):
            if outcome in sources.outcomes:
                raise ValueError(f"outcome {outcome!r} configured twice")
            design = design_for(config, outcome, excluded)
            sources.designs[outcome] = design
            sources.outcomes[outcome] = DailyPanel.from_counts(sources.counts, outcome, design.units)
    return sources


def _selected(sources: Sources, outcome: Optional[str]) -> List[str]:
    names = sorted(sources.outcomes)
    if outcome is None:
        return names
    if outcome not in sources.outcomes:
        raise ValueError(f"unknown outcome {outcome!r}; configured: {names}")
    return [outcome]


def _panel(sources: Sources, outcome: str) -> Panel:
    source = sources.outcomes[outcome]
    if isinstance(source, Panel):
        return source
    return build_panel(source, sources.designs[outcome])


def analyze_outcome(outcome: str, sources: Sources, config: RunConfig, threads: int) -> Tuple[OutcomeResult, List[str]]:
    """Main fit, unit placebos, in-time placebos and early roll-in for one outcome."""
    synth_settings = SynthSettings.from_config(config.synth)
    settings = InferenceSettings.from_config(config.inference, threads)
    source = sources.outcomes[outcome]
    design = sources.designs.get(outcome)
    analysis = analyze_panel(_panel(sources, outcome), synth_settings, settings)
    result = OutcomeResult(outcome, analysis)
    failures = []

    for when in config.inference.in_time_dates:
        try:
            result.in_time.append((when, in_time_placebo(source, design, when, synth_settings, settings)))
        except ValueError as e:
            logger.error(f"{outcome}: in-time placebo at {when} failed: {e}")
            failures.append(f"{outcome}: in-time placebo {when}: {e}")
    for when in config.inference.early_rollin_dates:
        try:
            result.early_rollin.append((when, early_rollin(source, design, when, synth_settings, settings)))
        except ValueError as e:
            logger.error(f"{outcome}: early roll-in at {when} failed: {e}")
            failures.append(f"{outcome}: early roll-in {when}: {e}")
    return result, failures


def run_its(config: RunConfig, counts: dict) -> Tuple[Dict[str, ItsFit], List[str]]:
    """Per-outcome ARIMA-error ITS fits, plus the Poisson variant when configured."""
    its = config.its
    settings = ItsSettings.from_config(its)
    city = its.city or config.study.treated_unit
    start, end = pd.Timestamp(its.window_start), pd.Timestamp(config.study.window_end)
    intervention = config.study.intervention_date
    fits: Dict[str, ItsFit] = {}
    failures: List[str] = []

    def daily_for(category: str) -> pd.Series:
        daily = DailyPanel.from_counts(counts, category, [city]).series.get(city)
        if daily is None:
            raise ValueError(f"no daily counts for {city}/{category}")
        return daily.loc[start:end]

    for outcome in its.outcomes or sorted(config.outcomes):
        try:
            fits[outcome] = fit_its(daily_for(outcome), intervention - timedelta(days=1), settings)
        except ValueError as e:
            logger.error(f"ITS {outcome} failed: {e}")
            failures.append(f"its {outcome}: {e}")
    if its.homicide.enabled:
        name = f"{its.homicide.category}_poisson"
        try:
            fits[name] = fit_its_poisson(daily_for(its.homicide.category), intervention, settings)
        except ValueError as e:
            logger.error(f"ITS {name} failed: {e}")
            failures.append(f"its {name}: {e}")
    return fits, failures


def _write_its(writer: ReportWriter, fits: Dict[str, ItsFit], alpha: float) -> Optional[pd.DataFrame]:
    if not fits:
        return None
    table = its_report(fits, alpha)
    writer.frame("its_treatment.csv", table, index=False)
    gaussian = {name: fit for name, fit in fits.items() if fit.family == "gaussian"}
    if gaussian:
        writer.frame("its_coefficients.csv", coefficient_table(gaussian))
    return table


def _write_ingest(writer: ReportWriter, sources: Sources) -> None:
    if sources.counts is None:
        return
    writer.frame("daily_counts.csv", counts_to_frame(sources.counts), index=False)
    writer.adopt(sources.audit.write(writer.out_dir / "ingest_audit.yaml"))


def _write_placebo_tables(writer: ReportWriter, results: List[OutcomeResult], config: RunConfig) -> None:
    writer.frame("main_table.csv", main_table(results))
    writer.frame("effect_bounds.csv", bounds_table(results, tuple(config.inference.bound_percentiles)))
    writer.frame("adjusted_pvalues.csv", adjusted_table(*adjust_outcomes(results, config.inference.alpha)))
    writer.frame("placebos_in_time.csv", placebo_date_table(results, "in_time"), index=False)
    writer.frame("placebos_early_rollin.csv", placebo_date_table(results, "early_rollin"), index=False)
    writer.frame("placebo_units.csv", placebo_units_table(results), index=False)


def _write_fit_tables(writer: ReportWriter, fits: Dict[str, SynthFit], config: RunConfig) -> None:
    display, full = weights_tables(fits, config.synth.penalty_scaling)
    writer.frame("weights.csv", display, float_format="%.2f")
    writer.frame("weights_full.csv", full)
    for outcome, fit in fits.items():
        writer.frame(f"series_{outcome}.csv", series_frame(fit, config.smoothing.span), index=False)


def run_pipeline(config: RunConfig, out_dir: Optional[Path] = None, threads: Optional[int] = None,
                 outcome: Optional[str] = None, seed: Optional[int] = None) -> ReportBundle:
    """
    ingest -> panel -> synth -> inference (-> its) for every configured
    outcome, then write the report bundle. Failed outcomes are listed in the
    manifest and the remaining outputs are kept.
    """
    out_dir = Path(out_dir or config.output.directory)
    threads = threads or config.threads
    writer = ReportWriter(out_dir)
    failures: List[str] = []
    status: Dict[str, str] = {}
    results: Dict[str, OutcomeResult] = {}
    its_table = None

    try:
        sources = load_sources(config, threads, seed)
        names = _selected(sources, outcome)
    except ValueError as e:
        logger.error(f"Loading inputs failed: {e}")
        writer.manifest(False, status, [f"inputs: {e}"])
        return ReportBundle(out_dir, writer.files, results, [f"inputs: {e}"], False)

    _write_ingest(writer, sources)
    for name in names:
        logger.info(f"Analyzing {name}")
        try:
            result, outcome_failures = analyze_outcome(name, sources, config, threads)
        except Exception as e:
            logger.error(f"{name} failed: {e}")
            logger.debug(f"{name} traceback", exc_info=True)
            failures.append(f"{name}: {e}")
            status[name] = "failed"
            continue
        results[name] = result
        failures.extend(outcome_failures)
        status[name] = "complete" if not outcome_failures else "partial"

    ordered = [results[n] for n in names if n in results]
    if ordered:
        _write_placebo_tables(writer, ordered, config)
        _write_fit_tables(writer, {r.outcome: r.analysis.fit for r in ordered}, config)
        for result in ordered:
            writer.frame(f"placebo_residuals_{result.outcome}.csv",
                         placebo_residuals_frame(result, config.smoothing.span), index=False)

    if config.its.enabled:
        if sources.counts is None:
            failures.append("its: ITS needs incident files or daily counts")
        else:
            fits, its_failures = run_its(config, sources.counts)
            failures.extend(its_failures)
            its_table = _write_its(writer, fits, config.its.alpha)

    adjusted = adjust_outcomes(ordered, config.inference.alpha) if ordered else None
    writer.text("summary.txt", render_summary(ordered, adjusted, its_table, SE_NOTE if its_table is not None else None))

    complete = not failures and len(results) == len(names)
    writer.manifest(complete, status, failures, {"smoothing_span": config.smoothing.span})
    level = logging.INFO if complete else logging.WARNING
    logger.log(level, f"Bundle written to {out_dir} ({len(writer.files)} files, complete={complete})")
    return ReportBundle(out_dir, writer.files, results, failures, complete, its_table)


def cmd_run(config: RunConfig, args) -> int:
    bundle = run_pipeline(config, args.out, args.threads, args.outcome, args.seed)
    return EXIT_OK if bundle.complete else EXIT_FAILED


def cmd_gen(config: RunConfig, args) -> int:
    if config.datagen is None:
        logger.error("gen needs a datagen section in the configuration")
        return EXIT_CONFIG
    spec = FactorModelSpec.from_config(config.datagen, args.seed)
    panel, truth = generate_panel(spec)
    out_dir = Path(args.out or config.output.directory)
    csv_path, _ = write_panel(panel, out_dir / f"panel_{panel.outcome}.csv")
    write_json({
        "seed": spec.seed,
        "injected_effect": truth.injected_effect,
        "T0": panel.T0,
        "treated_combination": None if truth.treated_combination is None else truth.treated_combination.tolist(),
    }, out_dir / f"ground_truth_{panel.outcome}.json")
    logger.info(f"Generated {panel.outcome} panel: {csv_path}")
    return EXIT_OK


def cmd_ingest(config: RunConfig, args) -> int:
    if config.study is None or not (config.inputs.incident_files or config.inputs.daily_counts):
        logger.error("ingest needs inputs.incident_files (or inputs.daily_counts) and a study section")
        return EXIT_CONFIG
    counts, audit = load_counts(config, args.threads or config.threads)
    writer = ReportWriter(Path(args.out or config.output.directory))
    _write_ingest(writer, Sources(counts=counts, audit=audit))
    logger.info(f"Ingested {audit.rows_read} rows into {len(counts)} daily series")
    return EXIT_OK


def cmd_panel(config: RunConfig, args) -> int:
    sources = load_sources(config, args.threads or config.threads, args.seed)
    out_dir = Path(args.out or config.output.directory)
    for name in _selected(sources, args.outcome):
        write_panel(_panel(sources, name), out_dir / f"panel_{name}.csv")
        logger.info(f"Wrote panel {name}")
    return EXIT_OK


def cmd_fit(config: RunConfig, args) -> int:
    sources = load_sources(config, args.threads or config.threads, args.seed)
    settings = SynthSettings.from_config(config.synth)
    fits = {name: fit_synthetic_control(_panel(sources, name), settings) for name in _selected(sources, args.outcome)}
    for name, fit in fits.items():
        logger.info(f"{name}: ATE {fit.effect.ate_per_1000:.4f}/1000, lambda {fit.solution.lambda_:.3g}, "
                    f"pre R2 {fit.solution.pre_r2:.2f}")
    _write_fit_tables(ReportWriter(Path(args.out or config.output.directory)), fits, config)
    return EXIT_OK


def cmd_placebo(config: RunConfig, args) -> int:
    threads = args.threads or config.threads
    sources = load_sources(config, threads, args.seed)
    results, failed = [], False
    for name in _selected(sources, args.outcome):
        result, failures = analyze_outcome(name, sources, config, threads)
        results.append(result)
        failed = failed or bool(failures)
    _write_placebo_tables(ReportWriter(Path(args.out or config.output.directory)), results, config)
    return EXIT_FAILED if failed else EXIT_OK


def cmd_its(config: RunConfig, args) -> int:
    if config.study is None or not (config.inputs.incident_files or config.inputs.daily_counts):
        logger.error("its needs inputs.incident_files (or inputs.daily_counts) and a study section")
        return EXIT_CONFIG
    counts, _ = load_counts(config, args.threads or config.threads)
    fits, failures = run_its(config, counts)
    _write_its(ReportWriter(Path(args.out or config.output.directory)), fits, config.its.alpha)
    return EXIT_FAILED if failures or not fits else EXIT_OK


COMMANDS = {
    "ingest": (cmd_ingest, "Parse incident files into daily counts and an audit report"),
    "panel": (cmd_panel, "Build analysis panels and write them as CSV"),
    "fit": (cmd_fit, "Fit the synthetic control and write weights and series"),
    "placebo": (cmd_placebo, "Run unit, in-time and early roll-in placebos"),
    "its": (cmd_its, "Fit the interrupted-time-series models"),
    "run": (cmd_run, "Run the full pipeline and write the report bundle"),
    "gen": (cmd_gen, "Generate a synthetic factor-model panel"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Ridge synthetic control with placebo inference")
    subparsers = parser.add_subparsers(dest='command', help='Commands')
    for name, (_, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument('--config', default='configs/datagen.yaml', help='Path to the YAML run configuration')
        sub.add_argument('--outcome', help='Restrict to one outcome')
        sub.add_argument('--out', type=Path, help='Output directory (default: output.directory)')
        sub.add_argument('--seed', type=int, help='Override datagen.seed')
        sub.add_argument('--threads', type=int, help='Worker threads for placebo fits and ingest')
        sub.add_argument('--debug', action='store_true', help='Enable debug logging')
        sub.add_argument('--simple-logs', action='store_true', help='Use plain log lines without symbols')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG

    try:
        loader = ConfigLoader(args.config)
    except (FileNotFoundError, ValueError) as e:
        configure_logging(simple=args.simple_logs)
        logger.error(str(e))
        return EXIT_CONFIG
    loader.setup_logging(debug=args.debug, simple=args.simple_logs)

    overrides = {}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.seed is not None and loader.get("datagen") is not None:
        overrides["datagen.seed"] = args.seed
    try:
        config = loader.validate(overrides)
    except ValidationError as e:
        for line in format_validation_error(e):
            logger.error(f"Invalid configuration {args.config}: {line}")
        return EXIT_CONFIG

    handler, _ = COMMANDS[args.command]
    try:
        return handler(config, args)
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        logger.debug("traceback", exc_info=True)
        return EXIT_FAILED
