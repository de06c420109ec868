"""
Configuration loader for crimesynth runs.
Loads a YAML run configuration and validates it into a RunConfig model.
"""

import logging
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    """Base for every config section: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class StudySection(_Section):
    window_start: date
    intervention_date: date
    window_end: date
    treated_unit: str
    populations: Dict[str, float] = Field(default_factory=dict)
    exclude_units: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_dates(self):
        if not self.window_start < self.intervention_date <= self.window_end:
            raise ValueError("study dates must satisfy window_start < intervention_date <= window_end")
        return self


class IncidentSchema(_Section):
    """Column map for one incident CSV file."""

    date_column: str
    descriptor_columns: List[str] = Field(..., min_length=1)
    city_column: Optional[str] = None
    city_id: Optional[str] = None
    agency_code_column: Optional[str] = None
    date_format: Literal["iso", "%m/%d/%Y"] = "iso"

    @model_validator(mode="after")
    def _check_city(self):
        if not self.city_column and not self.city_id:
            raise ValueError("schema needs either city_column or a constant city_id")
        return self


class IncidentFile(_Section):
    path: Path
    schema_: IncidentSchema = Field(..., alias="schema")

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class InputsSection(_Section):
    incident_files: List[IncidentFile] = Field(default_factory=list)
    category_map: Optional[Path] = None
    vocabulary: Optional[Path] = None
    daily_counts: Optional[Path] = None
    panels: Dict[str, Path] = Field(default_factory=dict)


DEFAULT_BLOCK_LEN_DAYS = 7
DEFAULT_BLOCK_LEN = {"assault": 7, "theft": 7, "drug": 14, "robbery": 21, "burglary": 21}


class OutcomeSection(_Section):
    block_len_days: Optional[int] = Field(None, ge=1)


class SynthSection(_Section):
    lambda_min: float = Field(1e-8, gt=0)
    lambda_max: float = Field(1e-2, gt=0)
    lambda_grid_size: int = Field(100, ge=2)
    train_fraction: float = Field(0.8, gt=0, lt=1)
    penalty_scaling: Literal["relative", "absolute"] = "relative"
    fixed_lambda: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def _check_grid(self):
        if self.lambda_min >= self.lambda_max:
            raise ValueError("synth.lambda_min must be below synth.lambda_max")
        return self


class InferenceSection(_Section):
    screening_factor: float = Field(7.5, gt=0)
    sidedness: Literal["one_sided_upper", "two_sided"] = "one_sided_upper"
    alpha: float = Field(0.1, gt=0, lt=1)
    include_treated_in_placebo_pool: bool = False
    bound_percentiles: List[float] = Field(default_factory=lambda: [5.0, 95.0])
    in_time_dates: List[date] = Field(
        default_factory=lambda: [date(2019, 1, 1), date(2019, 3, 1), date(2019, 6, 1)]
    )
    early_rollin_dates: List[date] = Field(
        default_factory=lambda: [date(2019, 9, 1), date(2019, 10, 1), date(2019, 11, 1)]
    )

    @field_validator("bound_percentiles")
    @classmethod
    def _check_percentiles(cls, v):
        if len(v) != 2 or not 0 <= v[0] < v[1] <= 100:
            raise ValueError("bound_percentiles must be [low, high] with 0 <= low < high <= 100")
        return v


class HomicideSection(_Section):
    enabled: bool = False
    category: str = "homicide"
    ar_lags: List[int] = Field(default_factory=lambda: [1])


class ItsSection(_Section):
    enabled: bool = False
    window_start: date = date(2017, 1, 1)
    city: Optional[str] = None
    outcomes: List[str] = Field(default_factory=list)
    spec: Literal["level_only", "level_and_slope"] = "level_only"
    max_p: int = Field(5, ge=0, le=5)
    max_q: int = Field(5, ge=0, le=5)
    max_d: int = Field(2, ge=0, le=2)
    extra_holidays: List[date] = Field(default_factory=list)
    year_effects: bool = True
    alpha: float = Field(0.05, gt=0, lt=1)
    homicide: HomicideSection = Field(default_factory=HomicideSection)


class IngestSection(_Section):
    discontinuity_threshold: float = Field(3.0, gt=1)
    discontinuity_min_mean: float = Field(1.0, ge=0)
    drop_flagged: bool = False


class SmoothingSection(_Section):
    span: float = Field(0.07, gt=0, le=1)


class OutputSection(_Section):
    directory: Path = Path("reports")


class LoggingSection(_Section):
    level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"
    loggers: Dict[str, str] = Field(default_factory=dict)


class DatagenSection(_Section):
    """Factor-model generator settings (see crimesynth.datagen.FactorModelSpec)."""

    outcome: str = "synthetic"
    n_units: int = Field(21, ge=3)
    n_blocks: int = Field(115, ge=10)
    T0: int = Field(104, ge=1)
    n_factors: int = Field(3, ge=1)
    noise_sd: float = Field(0.5, ge=0)
    injected_effect: float = 0.0
    seed: int = 0
    start_date: date = date(2018, 1, 1)
    block_len_days: int = Field(7, ge=1)
    treated_in_span: bool = False
    factor_ar: float = Field(0.8, ge=0, lt=1)
    level_sd: float = Field(1.0, ge=0)


class RunConfig(_Section):
    """Validated run configuration."""

    study: Optional[StudySection] = None
    inputs: InputsSection = Field(default_factory=InputsSection)
    outcomes: Dict[str, OutcomeSection] = Field(default_factory=dict)
    synth: SynthSection = Field(default_factory=SynthSection)
    inference: InferenceSection = Field(default_factory=InferenceSection)
    its: ItsSection = Field(default_factory=ItsSection)
    ingest: IngestSection = Field(default_factory=IngestSection)
    smoothing: SmoothingSection = Field(default_factory=SmoothingSection)
    output: OutputSection = Field(default_factory=OutputSection)
    logging: LoggingSection = Field(default_factory=LoggingSection)
    threads: int = Field(1, ge=1)
    datagen: Optional[DatagenSection] = None

    def block_len_for(self, outcome: str) -> int:
        """Configured block length for an outcome, else its default."""
        section = self.outcomes.get(outcome)
        if section is not None and section.block_len_days is not None:
            return section.block_len_days
        return DEFAULT_BLOCK_LEN.get(outcome, DEFAULT_BLOCK_LEN_DAYS)

    @model_validator(mode="after")
    def _check_sources(self):
        has_incidents = bool(self.inputs.incident_files or self.inputs.daily_counts)
        if has_incidents and self.study is None:
            raise ValueError("a study section is required when reading incident files or daily counts")
        if has_incidents and not self.outcomes:
            raise ValueError("at least one outcome must be configured")
        if self.inputs.incident_files and self.inputs.category_map is None:
            raise ValueError("inputs.category_map is required with incident_files")
        if not (has_incidents or self.inputs.panels or self.datagen):
            raise ValueError("no input: configure inputs.incident_files, inputs.daily_counts, inputs.panels or datagen")
        return self


def format_validation_error(error: ValidationError) -> List[str]:
    """Render pydantic errors as 'dotted.key: message' lines."""
    lines = []
    for err in error.errors():
        key = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"{key}: {err['msg']}")
    return lines


class ConfigLoader:
    """Configuration loader that handles the YAML run configuration."""

    def __init__(self, config_path: str = "configs/datagen.yaml"):
        """
        Initialize the configuration loader.

        Args:
            config_path: Path to the YAML configuration file
        """
        self.config_path = Path(config_path)
        self._config = None
        self._load_config()

    def _load_config(self) -> None:
        """Load configuration from YAML file."""
        if not self.config_path.exists():
            raise FileNotFoundError(
                f"Configuration file not found: {self.config_path}\n\n"
                f"Copy config.example.yaml and edit it, or start from configs/datagen.yaml"
            )

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                self._config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValueError(f"Invalid YAML in configuration file: {e}")

        if not isinstance(self._config, dict):
            raise ValueError(f"Configuration file must contain a mapping, got {type(self._config).__name__}")

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value using dot notation.

        Args:
            key: Configuration key in dot notation (e.g., 'synth.lambda_min')
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        keys = key.split('.')
        value = self._config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    def get_required(self, key: str) -> Any:
        """
        Get a required configuration value.

        Raises:
            ValueError: If required value is not found
        """
        value = self.get(key)
        if value is None:
            raise ValueError(f"Required configuration value not found: config key '{key}'")
        return value

    def get_section(self, section: str) -> Dict[str, Any]:
        """Get an entire configuration section."""
        return self.get(section, {}) or {}

    def validate(self, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """
        Validate the raw mapping into a RunConfig.

        Relative paths in the inputs section are resolved against the config
        file's directory.

        Raises:
            pydantic.ValidationError: unknown keys or invalid values
        """
        raw = dict(self._config)
        for key, value in (overrides or {}).items():
            _set_dotted(raw, key, value)
        config = RunConfig.model_validate(raw)
        return _resolve_paths(config, self.config_path.parent)

    def setup_logging(self, debug: bool = False, simple: bool = False) -> None:
        """Setup logging based on configuration."""
        logging_config = self.get_section('logging')
        level = 'DEBUG' if debug else logging_config.get('level', 'INFO')
        configure_logging(level, logging_config.get('loggers', {}), simple=simple)


def _set_dotted(mapping: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split('.')
    node = mapping
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
        node[part] = dict(child)
        node = node[part]
    node[parts[-1]] = value


def _resolve_paths(config: RunConfig, base: Path) -> RunConfig:
    def resolve(path: Optional[Path]) -> Optional[Path]:
        if path is None or path.is_absolute():
            return path
        return base / path

    inputs = config.inputs
    files = [f.model_copy(update={"path": resolve(f.path)}) for f in inputs.incident_files]
    inputs = inputs.model_copy(update={
        "incident_files": files,
        "category_map": resolve(inputs.category_map),
        "vocabulary": resolve(inputs.vocabulary),
        "daily_counts": resolve(inputs.daily_counts),
        "panels": {name: resolve(path) for name, path in inputs.panels.items()},
    })
    return config.model_copy(update={"inputs": inputs})


class SymbolFormatter(logging.Formatter):
    """Custom formatter that adds symbols for different log levels"""

    SYMBOLS = {
        logging.DEBUG: '◇',
        logging.INFO: '✓',
        logging.WARNING: '⚠',
        logging.ERROR: '✗',
        logging.CRITICAL: '‼'
    }

    def format(self, record):
        symbol = self.SYMBOLS.get(record.levelno, '•')
        timestamp = self.formatTime(record, "%H:%M:%S")
        level_name = f"{record.levelname:<5}"
        parts = [symbol, timestamp, '│', record.name, '│', level_name, '│', record.getMessage()]
        return ' '.join(parts)


def configure_logging(level: str = "INFO", loggers: Optional[Dict[str, str]] = None, simple: bool = False) -> None:
    """Install the root handler and per-logger levels."""
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    handler = logging.StreamHandler()
    if simple:
        handler.setFormatter(logging.Formatter("crimesynth - %(levelname)s - %(message)s"))
    else:
        handler.setFormatter(SymbolFormatter())

    logging.root.setLevel(getattr(logging, level))
    logging.root.addHandler(handler)

    for logger_name, logger_level in (loggers or {}).items():
        logging.getLogger(logger_name).setLevel(getattr(logging, logger_level))


def load_run_config(config_path: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load and validate a run configuration in one step."""
    return ConfigLoader(config_path).validate(overrides)
