"""
Analysis panel construction: block aggregation anchored at the intervention
date, per-capita normalisation and pre-period demeaning.
"""

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .ingest import LEVEL1_OF, DailyCountSeries
from .utils import read_json, write_frame, write_json

logger = logging.getLogger(__name__)

MIN_PRE_BLOCKS = 8
MIN_POST_BLOCKS = 1
DEMEAN_TOLERANCE = 1e-12


class PanelError(ValueError):
    """Panel cannot be built or violates its invariants."""


@dataclass(frozen=True)
class StudyDesign:
    window_start: date
    intervention_date: date
    window_end: date
    block_len_days: int
    treated_unit: str
    populations: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.window_start < self.intervention_date <= self.window_end:
            raise PanelError(
                f"study dates must satisfy window_start < intervention_date <= window_end, "
                f"got {self.window_start}, {self.intervention_date}, {self.window_end}"
            )
        if self.block_len_days < 1:
            raise PanelError(f"block_len_days must be >= 1, got {self.block_len_days}")
        bad = [unit for unit, pop in self.populations.items() if not pop > 0]
        if bad:
            raise PanelError(f"non-positive population for {bad}")

    @property
    def units(self) -> Tuple[str, ...]:
        """Treated unit first, then the remaining population keys sorted."""
        donors = sorted(u for u in self.populations if u != self.treated_unit)
        return (self.treated_unit, *donors)


@dataclass(frozen=True)
class BlockSeries:
    unit: str
    block_starts: pd.DatetimeIndex
    counts: np.ndarray
    T0: int

    @property
    def T(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class DailyPanel:
    """Daily counts per unit for one outcome, before block aggregation."""

    outcome: str
    series: Mapping[str, pd.Series]

    @classmethod
    def from_counts(cls, counts: Mapping[Tuple[str, str], DailyCountSeries], outcome: str,
                    units: Optional[Iterable[str]] = None) -> "DailyPanel":
        """
        Collect one outcome's daily series per city.

        ``outcome`` may be a level-2 category or a level-1 class; level-1
        outcomes sum the member categories day by day. A city ingested with
        no incidents of the outcome gets an all-zero series.
        """
        wanted = set(units) if units is not None else None
        series: Dict[str, pd.Series] = {}
        seen: Dict[str, pd.DatetimeIndex] = {}
        for (city, category), daily in sorted(counts.items()):
            if wanted is not None and city not in wanted:
                continue
            seen.setdefault(city, daily.counts.index)
            if category != outcome and LEVEL1_OF.get(category) != outcome:
                continue
            series[city] = series[city] + daily.counts if city in series else daily.counts
        for city, index in seen.items():
            if city not in series:
                series[city] = pd.Series(0, index=index, dtype="int64")
        return cls(outcome, dict(sorted(series.items())))


@dataclass(frozen=True, eq=False)
class Panel:
    """
    Rectangular unit x block matrix of per-capita, pre-demeaned outcomes.

    Row 0 is the treated unit; the remaining rows are donors.
    """

    outcome: str
    units: Tuple[str, ...]
    block_starts: pd.DatetimeIndex
    block_len_days: int
    Y: np.ndarray
    raw_counts: np.ndarray
    populations: Tuple[float, ...]
    T0: int

    def __post_init__(self):
        n_units, T = self.Y.shape if self.Y.ndim == 2 else (0, 0)
        if self.Y.ndim != 2 or n_units != len(self.units):
            raise PanelError(f"Y must have one row per unit ({len(self.units)}), got shape {self.Y.shape}")
        if self.raw_counts.shape != self.Y.shape:
            raise PanelError(f"raw_counts shape {self.raw_counts.shape} differs from Y shape {self.Y.shape}")
        if len(self.block_starts) != T:
            raise PanelError(f"{len(self.block_starts)} block starts for {T} blocks")
        if len(self.populations) != n_units:
            raise PanelError(f"{len(self.populations)} populations for {n_units} units")
        if len(set(self.units)) != n_units:
            raise PanelError(f"duplicate units in {self.units}")
        if not 1 <= self.T0 < T:
            raise PanelError(f"need 1 <= T0 < T, got T0={self.T0}, T={T}")
        if not np.all(np.isfinite(self.Y)):
            bad = [u for u, row in zip(self.units, self.Y) if not np.all(np.isfinite(row))]
            raise PanelError(f"missing or non-finite cells for {bad}")
        scale = max(1.0, float(np.max(np.abs(self.Y))))
        pre_means = self.Y[:, :self.T0].mean(axis=1)
        off = np.abs(pre_means) > DEMEAN_TOLERANCE * scale
        if off.any():
            raise PanelError(f"pre-period mean of Y is not 0 for {[u for u, o in zip(self.units, off) if o]}")
        self.Y.setflags(write=False)
        self.raw_counts.setflags(write=False)

    @classmethod
    def from_raw(cls, outcome: str, units: Sequence[str], block_starts: pd.DatetimeIndex, block_len_days: int,
                 raw_counts: np.ndarray, populations: Sequence[float], T0: int) -> "Panel":
        """Derive Y from raw block counts: per-capita rates demeaned over the first T0 blocks."""
        raw = np.asarray(raw_counts, dtype=float)
        if raw.ndim != 2 or raw.shape[0] != len(units):
            raise PanelError(f"raw_counts must be (units, blocks), got shape {raw.shape}")
        rows = [demean_pre(per_capita(row, pop), T0) for row, pop in zip(raw, populations)]
        return cls(
            outcome=outcome,
            units=tuple(units),
            block_starts=pd.DatetimeIndex(block_starts),
            block_len_days=int(block_len_days),
            Y=np.vstack(rows),
            raw_counts=raw.copy(),
            populations=tuple(float(p) for p in populations),
            T0=int(T0),
        )

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def treated_unit(self) -> str:
        return self.units[0]

    @property
    def donors(self) -> Tuple[str, ...]:
        return self.units[1:]

    @property
    def intervention_block_start(self) -> pd.Timestamp:
        return self.block_starts[self.T0]

    def population_of(self, unit: str) -> float:
        return self.populations[self.units.index(unit)]

    def retime(self, T0: int, T: Optional[int] = None) -> "Panel":
        """
        Re-anchor at block level: keep the first T blocks and declare the
        first T0 of them pre-period. Y is re-derived from raw counts.
        """
        T = self.T if T is None else T
        if not 1 <= T0 < T <= self.T:
            raise PanelError(f"cannot retime to T0={T0}, T={T} on a panel with {self.T} blocks")
        return Panel.from_raw(self.outcome, self.units, self.block_starts[:T], self.block_len_days,
                              self.raw_counts[:, :T], self.populations, T0)

    def for_treated(self, unit: str, exclude: Iterable[str] = ()) -> "Panel":
        """Reorder rows so ``unit`` is treated; donors stay sorted, ``exclude`` is dropped."""
        if unit not in self.units:
            raise PanelError(f"unit {unit!r} not in panel")
        excluded = set(exclude) - {unit}
        donors = sorted(u for u in self.units if u != unit and u not in excluded)
        order = [self.units.index(u) for u in (unit, *donors)]
        return Panel(
            outcome=self.outcome,
            units=tuple(self.units[i] for i in order),
            block_starts=self.block_starts,
            block_len_days=self.block_len_days,
            Y=self.Y[order].copy(),
            raw_counts=self.raw_counts[order].copy(),
            populations=tuple(self.populations[i] for i in order),
            T0=self.T0,
        )

    def to_frame(self, values: str = "Y") -> pd.DataFrame:
        data = self.Y if values == "Y" else self.raw_counts
        frame = pd.DataFrame(data.T, columns=list(self.units))
        frame.insert(0, "block_start", self.block_starts.strftime("%Y-%m-%d"))
        return frame


def aggregate_blocks(
    daily: Union[DailyCountSeries, pd.Series],
    design: StudyDesign,
    min_pre_blocks: int = MIN_PRE_BLOCKS,
    min_post_blocks: int = MIN_POST_BLOCKS,
    unit: Optional[str] = None,
) -> BlockSeries:
    """
    Sum daily counts into blocks anchored at the intervention date.

    Pre blocks run backward from the intervention date and post blocks run
    forward from it; partial blocks at either end of the window are dropped.
    window_end is inclusive.

    Raises:
        PanelError: daily series does not cover the window, or too few
            complete pre/post blocks
    """
    if isinstance(daily, DailyCountSeries):
        counts, unit = daily.counts, unit or daily.city_id
    else:
        counts = daily
    unit = unit or "<unit>"
    L = design.block_len_days
    n_pre = (design.intervention_date - design.window_start).days // L
    n_post = ((design.window_end - design.intervention_date).days + 1) // L
    if n_pre < min_pre_blocks or n_post < min_post_blocks:
        raise PanelError(
            f"{unit}: {n_pre} complete pre blocks and {n_post} post blocks of {L} days; "
            f"need at least {min_pre_blocks} and {min_post_blocks}"
        )

    first = pd.Timestamp(design.intervention_date - timedelta(days=n_pre * L))
    days = pd.date_range(first, periods=(n_pre + n_post) * L, freq="D")
    index = pd.DatetimeIndex(counts.index)
    missing = days.difference(index)
    if len(missing):
        raise PanelError(f"{unit}: daily series is missing {len(missing)} days, first {missing[0].date()}")

    values = counts.reindex(days).to_numpy(dtype=float)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise PanelError(f"{unit}: daily counts must be finite and non-negative")
    blocks = values.reshape(n_pre + n_post, L).sum(axis=1)
    return BlockSeries(unit, days[::L], blocks, n_pre)


def per_capita(counts: Union[np.ndarray, float], population: float) -> np.ndarray:
    """Events per person per block."""
    if not population > 0:
        raise PanelError(f"population must be positive, got {population}")
    return np.asarray(counts, dtype=float) / population


def demean_pre(rates: np.ndarray, T0: int) -> np.ndarray:
    """Subtract the mean of the first T0 values from every value."""
    rates = np.asarray(rates, dtype=float)
    if not 1 <= T0 <= len(rates):
        raise PanelError(f"T0 must be in [1, {len(rates)}], got {T0}")
    return rates - rates[:T0].mean()


def assemble_panel(series: Mapping[str, BlockSeries], design: StudyDesign, outcome: str = "outcome") -> Panel:
    """
    Stack per-unit block series into a Panel, treated unit first.

    Units are the design's population keys.

    Raises:
        PanelError: a unit's series is missing or its blocks differ from the
            treated unit's
    """
    if design.treated_unit not in design.populations:
        raise PanelError(f"treated unit {design.treated_unit!r} has no population")
    units = design.units
    if len(units) < 3:
        raise PanelError(f"need a treated unit and at least 2 donors, got {list(units)}")
    missing = [u for u in units if u not in series]
    if missing:
        raise PanelError(f"{outcome}: no block series for units {missing}")

    reference = series[design.treated_unit]
    for unit in units:
        s = series[unit]
        if s.T0 != reference.T0 or not s.block_starts.equals(reference.block_starts):
            raise PanelError(f"{outcome}: blocks of {unit!r} differ from those of {design.treated_unit!r}")

    raw = np.vstack([series[u].counts for u in units])
    populations = [design.populations[u] for u in units]
    return Panel.from_raw(outcome, units, reference.block_starts, design.block_len_days, raw, populations, reference.T0)


def build_panel(daily: DailyPanel, design: StudyDesign, min_pre_blocks: int = MIN_PRE_BLOCKS) -> Panel:
    """aggregate_blocks, per_capita and demean_pre for every unit of one outcome."""
    missing = [u for u in design.units if u not in daily.series]
    if missing:
        raise PanelError(f"{daily.outcome}: no daily counts for units {missing}")
    blocks = {
        unit: aggregate_blocks(daily.series[unit], design, min_pre_blocks=min_pre_blocks, unit=unit)
        for unit in design.units
    }
    panel = assemble_panel(blocks, design, daily.outcome)
    logger.debug(f"{daily.outcome}: panel {len(panel.units)} units x {panel.T} blocks (T0={panel.T0})")
    return panel


def _meta_path(path: Path) -> Path:
    return Path(path).with_suffix(".meta.json")


def write_panel(panel: Panel, path: Path) -> Tuple[Path, Path]:
    """Write raw block counts as a wide CSV plus a JSON metadata sidecar."""
    csv_path = write_frame(panel.to_frame("raw"), path, index=False)
    meta = {
        "outcome": panel.outcome,
        "treated_unit": panel.treated_unit,
        "units": list(panel.units),
        "T0": panel.T0,
        "T": panel.T,
        "block_len_days": panel.block_len_days,
        "populations": dict(zip(panel.units, panel.populations)),
        "values": "raw_block_counts",
    }
    meta_path = write_json(meta, _meta_path(path))
    return csv_path, meta_path


def read_panel(path: Path) -> Panel:
    """Inverse of write_panel."""
    path = Path(path)
    try:
        meta = read_json(_meta_path(path))
        frame = pd.read_csv(path, dtype={"block_start": str})
    except (OSError, ValueError) as e:
        raise PanelError(f"Cannot read panel {path}: {e}")
    units = meta["units"]
    missing = [u for u in units if u not in frame.columns]
    if missing:
        raise PanelError(f"{path}: columns for units {missing} missing")
    if len(frame) != meta["T"]:
        raise PanelError(f"{path}: {len(frame)} rows, metadata says T={meta['T']}")
    raw = frame[units].to_numpy(dtype=float).T
    return Panel.from_raw(
        meta["outcome"], units, pd.to_datetime(frame["block_start"]), meta["block_len_days"],
        raw, [meta["populations"][u] for u in units], meta["T0"],
    )
