"""
Incident ingestion: parse heterogeneous incident CSVs, classify them into the
level-2 crime taxonomy and count them per city and day.
"""

import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from .config_loader import IncidentSchema

logger = logging.getLogger(__name__)

LEVEL2_CATEGORIES = (
    "homicide", "rape", "robbery", "assault", "burglary", "theft",
    "other_property", "drug", "white_collar", "gambling", "arson", "unmapped",
)

LEVEL1_OF = {
    "homicide": "violent",
    "rape": "violent",
    "robbery": "violent",
    "assault": "violent",
    "burglary": "property",
    "theft": "property",
    "other_property": "property",
    "arson": "property",
    "drug": "drug",
    "gambling": "gambling",
    "white_collar": "other",
    "unmapped": "unmapped",
}

CODE_PREFIX = "code:"
CHUNK_ROWS = 50_000
DISCONTINUITY_WINDOW = 30
MIN_DISCONTINUITY_DAYS = 120
DISCONTINUITY_MIN_MEAN = 1.0
BAD_ROW_MARK = "\x00bad-row:"

_WHITESPACE = re.compile(r"\s+")


class IngestError(ValueError):
    """Fatal ingestion problem (unreadable file, invalid map, short series)."""


@dataclass(frozen=True)
class IncidentRecord:
    city_id: str
    event_date: date
    offense_text: Tuple[str, ...]
    agency_code: Optional[str] = None


@dataclass(frozen=True)
class CategoryRule:
    pattern: str
    level1: str
    level2: str
    line: int = 0

    @property
    def is_code_rule(self) -> bool:
        return self.pattern.startswith(CODE_PREFIX)


@dataclass(frozen=True)
class CategoryMap:
    rules: Tuple[CategoryRule, ...]
    source: str = "<memory>"

    def match(self, record: IncidentRecord) -> Optional[CategoryRule]:
        """Return the first rule matching any of the record's descriptors."""
        texts = [normalize_descriptor(t) for t in record.offense_text if t]
        code = normalize_descriptor(record.agency_code) if record.agency_code else None
        for rule in self.rules:
            if rule.is_code_rule:
                if code is not None and code.startswith(rule.pattern[len(CODE_PREFIX):]):
                    return rule
            elif any(text.startswith(rule.pattern) for text in texts):
                return rule
        return None


@dataclass(frozen=True)
class RowError:
    row_index: int
    message: str


@dataclass
class IngestAudit:
    """Running tally of data-quality findings, emitted as a YAML report."""

    rows_read: int = 0
    row_errors: List[RowError] = field(default_factory=list)
    unmapped: Counter = field(default_factory=Counter)
    out_of_window: int = 0
    discontinuities: Dict[str, dict] = field(default_factory=dict)

    def merge(self, other: "IngestAudit") -> None:
        self.rows_read += other.rows_read
        self.row_errors.extend(other.row_errors)
        self.unmapped.update(other.unmapped)
        self.out_of_window += other.out_of_window
        self.discontinuities.update(other.discontinuities)

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "malformed_rows": len(self.row_errors),
            "row_errors": [{"row": e.row_index, "error": e.message} for e in self.row_errors],
            "out_of_window": self.out_of_window,
            "unmapped_total": sum(self.unmapped.values()),
            "unmapped_descriptors": dict(sorted(self.unmapped.items())),
            "discontinuities": dict(sorted(self.discontinuities.items())),
        }

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False, allow_unicode=True)
        return path


@dataclass(frozen=True)
class DailyCountSeries:
    city_id: str
    category: str
    counts: pd.Series  # int64, indexed by a gapless daily DatetimeIndex

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.counts.index


@dataclass(frozen=True)
class DiscontinuityResult:
    flagged: bool
    changepoint: Optional[date]
    ratio: float


def normalize_descriptor(text: str) -> str:
    """Trim, collapse internal whitespace and casefold a descriptor."""
    return _WHITESPACE.sub(" ", str(text).strip()).casefold()


def load_category_map(path: Path, vocabulary: Optional[Path] = None) -> CategoryMap:
    """
    Load an ordered `pattern<TAB>level2` rule file.

    Args:
        path: Rule file; '#' starts a comment, blank lines are ignored
        vocabulary: Optional file with one descriptor per line; every entry
            must be matched by some rule

    Raises:
        IngestError: unreadable file, malformed line, unknown category or a
            vocabulary descriptor no rule covers
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as e:
        raise IngestError(f"Cannot read category map {path}: {e}")

    rules = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split('#', 1)[0].rstrip()
        if not line.strip():
            continue
        parts = line.split('\t')
        if len(parts) != 2:
            raise IngestError(f"{path}:{lineno}: expected 'pattern<TAB>level2', got {raw!r}")
        pattern, level2 = normalize_descriptor(parts[0]), parts[1].strip().lower()
        if not pattern or pattern == CODE_PREFIX:
            raise IngestError(f"{path}:{lineno}: empty pattern")
        if level2 not in LEVEL1_OF:
            raise IngestError(f"{path}:{lineno}: unknown level-2 category {level2!r}")
        rules.append(CategoryRule(pattern, LEVEL1_OF[level2], level2, lineno))

    if not rules:
        raise IngestError(f"Category map {path} has no rules")

    category_map = CategoryMap(tuple(rules), source=str(path))
    if vocabulary is not None:
        check_vocabulary(category_map, vocabulary)
    logger.info(f"Loaded {len(rules)} category rules from {path}")
    return category_map


def check_vocabulary(category_map: CategoryMap, vocabulary: Path) -> None:
    """Raise IngestError listing vocabulary descriptors with no matching rule."""
    try:
        entries = [l.strip() for l in Path(vocabulary).read_text(encoding='utf-8').splitlines()]
    except OSError as e:
        raise IngestError(f"Cannot read vocabulary {vocabulary}: {e}")
    uncovered = []
    for entry in entries:
        if not entry or entry.startswith('#'):
            continue
        sample = IncidentRecord("vocabulary", date(2000, 1, 1), (entry,))
        if category_map.match(sample) is None:
            uncovered.append(entry)
    if uncovered:
        raise IngestError(f"Category map is not total over {vocabulary}: no rule for {uncovered}")


def _parse_dates(values: pd.Series, date_format: str) -> pd.Series:
    values = values.str.strip()
    if date_format == "iso":
        return pd.to_datetime(values, format="ISO8601", errors="coerce")
    # Portals often append a time of day to MM/DD/YYYY.
    first_token = values.str.split(" ", n=1).str[0]
    return pd.to_datetime(first_token, format=date_format, errors="coerce")


def parse_incidents(path: Path, schema: IncidentSchema, audit: Optional[IngestAudit] = None) -> Iterator[IncidentRecord]:
    """
    Stream IncidentRecords from one incident CSV.

    Malformed rows are recorded in ``audit`` (row index counts data rows from
    0) and skipped; the stream continues.

    Raises:
        IngestError: file unreadable or declared columns missing from the header
    """
    path = Path(path)
    audit = audit if audit is not None else IngestAudit()
    try:
        header = pd.read_csv(path, dtype=str, encoding='utf-8', nrows=0).columns
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"Cannot read incident file {path}: {e}")

    def keep_position(fields: List[str]) -> List[str]:
        # Over-long rows are kept in place as a marker row.
        return [f"{BAD_ROW_MARK}{len(fields)}"] * len(header)

    try:
        reader = pd.read_csv(
            path, dtype=str, keep_default_na=False, encoding='utf-8', chunksize=CHUNK_ROWS,
            engine="python", on_bad_lines=keep_position,
        )
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"Cannot read incident file {path}: {e}")

    wanted = [schema.date_column, *schema.descriptor_columns]
    if schema.city_column:
        wanted.append(schema.city_column)
    if schema.agency_code_column:
        wanted.append(schema.agency_code_column)

    offset = 0
    try:
        for chunk in reader:
            if not isinstance(chunk.index, pd.RangeIndex):
                raise IngestError(f"{path}: first data row has more fields than the header")
            chunk = chunk.fillna("")
            missing = [c for c in wanted if c not in chunk.columns]
            if missing:
                raise IngestError(f"{path}: columns {missing} not in header {list(chunk.columns)}")
            bad = chunk[schema.date_column].str.startswith(BAD_ROW_MARK, na=False)
            parsed = _parse_dates(chunk[schema.date_column].mask(bad, ""), schema.date_format)
            cities = chunk[schema.city_column].str.strip() if schema.city_column else None
            for i in range(len(chunk)):
                row_index = offset + i
                audit.rows_read += 1
                if bad.iat[i]:
                    width = chunk[schema.date_column].iat[i][len(BAD_ROW_MARK):]
                    _row_error(audit, path, row_index, f"expected {len(header)} fields, saw {width}")
                    continue
                city = cities.iat[i] if cities is not None else schema.city_id
                if not city:
                    _row_error(audit, path, row_index, "empty city id")
                    continue
                stamp = parsed.iat[i]
                if pd.isna(stamp):
                    raw = chunk[schema.date_column].iat[i]
                    _row_error(audit, path, row_index, f"unparseable date {raw!r}")
                    continue
                texts = tuple(chunk[c].iat[i] for c in schema.descriptor_columns)
                code = chunk[schema.agency_code_column].iat[i] if schema.agency_code_column else None
                yield IncidentRecord(city, stamp.date(), texts, code or None)
            offset += len(chunk)
    except (UnicodeDecodeError, pd.errors.ParserError) as e:
        raise IngestError(f"Cannot read incident file {path}: {e}")


def _row_error(audit: IngestAudit, path: Path, row_index: int, message: str) -> None:
    audit.row_errors.append(RowError(row_index, message))
    logger.warning(f"{path.name} row {row_index}: {message}")


def classify_incident(record: IncidentRecord, category_map: CategoryMap, audit: Optional[IngestAudit] = None) -> str:
    """Return the level-2 category of the first matching rule, else 'unmapped'."""
    rule = category_map.match(record)
    if rule is not None:
        return rule.level2
    if audit is not None:
        key = " | ".join(normalize_descriptor(t) for t in record.offense_text)
        audit.unmapped[key] += 1
    return "unmapped"


def build_daily_counts(
    records: Iterable[IncidentRecord],
    window: Tuple[date, date],
    category_map: CategoryMap,
    audit: Optional[IngestAudit] = None,
) -> Dict[Tuple[str, str], DailyCountSeries]:
    """
    Count classified incidents per (city, category, day) inside ``window``.

    Days without incidents are present with count 0; records outside the
    inclusive window are excluded.
    """
    start, end = window
    if start > end:
        raise IngestError(f"window start {start} is after end {end}")
    tally: Counter = Counter()
    for record in records:
        if not start <= record.event_date <= end:
            if audit is not None:
                audit.out_of_window += 1
            continue
        category = classify_incident(record, category_map, audit)
        tally[(record.city_id, category, record.event_date)] += 1
    return _tally_to_series(tally, start, end)


def _tally_to_series(tally: Mapping[Tuple[str, str, date], int], start: date, end: date) -> Dict[Tuple[str, str], DailyCountSeries]:
    index = pd.date_range(start, end, freq="D")
    by_key: Dict[Tuple[str, str], Dict[date, int]] = {}
    for (city, category, day), n in tally.items():
        by_key.setdefault((city, category), {})[day] = n
    result = {}
    for key in sorted(by_key):
        values = by_key[key]
        counts = pd.Series(0, index=index, dtype="int64")
        counts.loc[pd.to_datetime(list(values))] = list(values.values())
        result[key] = DailyCountSeries(key[0], key[1], counts)
    return result


def ingest_files(
    files: Sequence[Tuple[Path, IncidentSchema]],
    category_map: CategoryMap,
    window: Tuple[date, date],
    threads: int = 1,
) -> Tuple[Dict[Tuple[str, str], DailyCountSeries], IngestAudit]:
    """Parse, classify and count several incident files, merging by key."""

    def one(item):
        path, schema = item
        audit = IngestAudit()
        counts = build_daily_counts(parse_incidents(path, schema, audit), window, category_map, audit)
        logger.info(f"{Path(path).name}: {audit.rows_read} rows, {len(audit.row_errors)} malformed, "
                    f"{sum(audit.unmapped.values())} unmapped")
        return counts, audit

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, files))

    merged: Dict[Tuple[str, str], pd.Series] = {}
    audit = IngestAudit()
    for counts, file_audit in results:
        audit.merge(file_audit)
        for key, series in counts.items():
            merged[key] = merged[key] + series.counts if key in merged else series.counts
    combined = {key: DailyCountSeries(key[0], key[1], merged[key]) for key in sorted(merged)}
    return combined, audit


def detect_reporting_discontinuity(
    series: DailyCountSeries,
    threshold: float = 3.0,
    min_mean: float = DISCONTINUITY_MIN_MEAN,
) -> DiscontinuityResult:
    """
    Flag a level shift between adjacent 30-day means.

    At each day t the mean of the 30 days starting at t is compared with the
    mean of the 30 days before it. The first run of days whose ratio falls
    outside [1/threshold, threshold] is the first flagged episode; the
    reported changepoint is the day within it with the largest |log ratio|.
    Days where both window means are below ``min_mean`` events per day are
    not compared.

    Raises:
        IngestError: series shorter than 120 days
    """
    x = series.counts.to_numpy(dtype=float)
    n = len(x)
    if n < MIN_DISCONTINUITY_DAYS:
        raise IngestError(f"{series.city_id}/{series.category}: {n} days, need at least {MIN_DISCONTINUITY_DAYS}")
    w = DISCONTINUITY_WINDOW
    csum = np.concatenate([[0.0], np.cumsum(x)])
    t = np.arange(w, n - w + 1)
    before = (csum[t] - csum[t - w]) / w
    after = (csum[t + w] - csum[t]) / w
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(after) - np.log(before)
    # Two empty or two sparse windows are not a shift.
    log_ratio[((before == 0) & (after == 0)) | (np.maximum(before, after) < min_mean)] = 0.0
    outside = np.abs(log_ratio) > np.log(threshold)
    if not outside.any():
        peak = float(np.exp(np.max(np.abs(log_ratio)))) if len(log_ratio) else 1.0
        return DiscontinuityResult(False, None, peak)

    first = int(np.argmax(outside))
    last = first
    while last + 1 < len(outside) and outside[last + 1]:
        last += 1
    run = np.abs(log_ratio[first:last + 1])
    at = first + int(np.argmax(run))
    changepoint = series.dates[t[at]].date()
    ratio = float(np.exp(log_ratio[at]))
    logger.warning(f"{series.city_id}/{series.category}: reporting discontinuity at {changepoint} (ratio {ratio:.3g})")
    return DiscontinuityResult(True, changepoint, ratio)


def screen_discontinuities(
    counts: Mapping[Tuple[str, str], DailyCountSeries],
    threshold: float,
    audit: Optional[IngestAudit] = None,
    categories: Optional[Iterable[str]] = None,
    min_mean: float = DISCONTINUITY_MIN_MEAN,
) -> List[str]:
    """
    Run discontinuity detection on each series; return flagged cities.

    ``categories`` limits screening to those level-2 categories (all when
    None).
    """
    wanted = set(categories) if categories is not None else None
    flagged = set()
    for (city, category), series in sorted(counts.items()):
        if wanted is not None and category not in wanted:
            continue
        if len(series.counts) < MIN_DISCONTINUITY_DAYS:
            continue
        result = detect_reporting_discontinuity(series, threshold, min_mean)
        if result.flagged:
            flagged.add(city)
            if audit is not None:
                audit.discontinuities[f"{city}/{category}"] = {
                    "changepoint": str(result.changepoint),
                    "ratio": round(result.ratio, 6),
                }
    return sorted(flagged)


def outcome_categories(outcomes: Iterable[str]) -> List[str]:
    """Level-2 categories behind outcome names (level-2 names or level-1 classes)."""
    names = set(outcomes)
    return sorted(c for c, level1 in LEVEL1_OF.items() if c in names or level1 in names)


def counts_to_frame(counts: Mapping[Tuple[str, str], DailyCountSeries]) -> pd.DataFrame:
    """Long `date,city,category,count` frame, sorted for stable output."""
    frames = []
    for (city, category), series in sorted(counts.items()):
        frames.append(pd.DataFrame({
            "date": series.dates.strftime("%Y-%m-%d"),
            "city": city,
            "category": category,
            "count": series.counts.to_numpy(),
        }))
    if not frames:
        return pd.DataFrame(columns=["date", "city", "category", "count"])
    return pd.concat(frames, ignore_index=True)


def counts_from_frame(frame: pd.DataFrame) -> Dict[Tuple[str, str], DailyCountSeries]:
    """Inverse of counts_to_frame; each (city, category) must be gapless."""
    result = {}
    for (city, category), group in frame.groupby(["city", "category"], sort=True):
        index = pd.DatetimeIndex(pd.to_datetime(group["date"]))
        counts = pd.Series(group["count"].to_numpy(dtype="int64"), index=index).sort_index()
        expected = pd.date_range(counts.index[0], counts.index[-1], freq="D")
        if len(expected) != len(counts) or not counts.index.equals(expected):
            raise IngestError(f"daily counts for {city}/{category} are not a gapless daily series")
        if (counts < 0).any():
            raise IngestError(f"daily counts for {city}/{category} contain negative values")
        result[(str(city), str(category))] = DailyCountSeries(str(city), str(category), counts)
    return result
