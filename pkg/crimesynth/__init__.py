"""Ridge-penalized synthetic control with placebo inference for city crime panels."""
from .config_loader import ConfigLoader, RunConfig, load_run_config
from .datagen import FactorModelSpec, GroundTruth, generate_panel
from .inference import (
    AdjustedPValues,
    Decision,
    InferenceError,
    InferenceSettings,
    PlaceboDistribution,
    TestReport,
    analyze_panel,
    early_rollin,
    effect_bounds,
    holm_sidak,
    in_time_placebo,
    p_value_ate,
    p_value_rmse,
    unit_placebos,
)
from .ingest import IngestAudit, IngestError, build_daily_counts, ingest_files, parse_incidents
from .its import ItsError, ItsFit, ItsSettings, build_design_matrix, fit_arima_regression, fit_its, select_orders
from .panel import DailyPanel, Panel, PanelError, StudyDesign, aggregate_blocks, build_panel
from .smoothing import loess_smooth
from .synth import SolverError, SynthFit, SynthSettings, estimate_ate, fit_synthetic_control, solve_weights, tune_lambda

__all__ = [
    # Configuration
    "ConfigLoader",
    "RunConfig",
    "load_run_config",
    # Ingest and panels
    "IngestAudit",
    "IngestError",
    "parse_incidents",
    "build_daily_counts",
    "ingest_files",
    "DailyPanel",
    "Panel",
    "PanelError",
    "StudyDesign",
    "aggregate_blocks",
    "build_panel",
    # Synthetic control
    "SolverError",
    "SynthFit",
    "SynthSettings",
    "solve_weights",
    "tune_lambda",
    "estimate_ate",
    "fit_synthetic_control",
    # Inference
    "AdjustedPValues",
    "Decision",
    "InferenceError",
    "InferenceSettings",
    "PlaceboDistribution",
    "TestReport",
    "unit_placebos",
    "p_value_ate",
    "p_value_rmse",
    "effect_bounds",
    "holm_sidak",
    "analyze_panel",
    "in_time_placebo",
    "early_rollin",
    # Interrupted time series
    "ItsError",
    "ItsFit",
    "ItsSettings",
    "build_design_matrix",
    "fit_arima_regression",
    "select_orders",
    "fit_its",
    # Synthetic data and display
    "FactorModelSpec",
    "GroundTruth",
    "generate_panel",
    "loess_smooth",
]
