"""
Synthetic factor-model panels with known ground truth.

Random numbers come from a small, fully specified generator (splitmix64
seeding, xorshift64* output, Box-Muller normals) so that panels are
reproducible bit for bit across platforms and implementations.
"""

import logging
import math
from dataclasses import dataclass
from datetime import date
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .config_loader import DatagenSection
from .panel import Panel

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


class DatagenError(ValueError):
    """Invalid generator specification."""


def splitmix64(state: int) -> Tuple[int, int]:
    """One splitmix64 step; returns (new state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class XorShift64Star:
    """xorshift64* generator seeded through splitmix64."""

    def __init__(self, seed: int):
        _, state = splitmix64(seed & MASK64)
        self.state = state or 0x9E3779B97F4A7C15
        self._spare: Optional[float] = None

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def uniform(self) -> float:
        """Uniform on [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=float)


@dataclass(frozen=True)
class FactorModelSpec:
    n_units: int = 21
    n_blocks: int = 115
    T0: int = 104
    n_factors: int = 3
    noise_sd: float = 0.5
    injected_effect: float = 0.0
    seed: int = 0
    start_date: date = date(2018, 1, 1)
    block_len_days: int = 7
    treated_in_span: bool = False
    factor_ar: float = 0.8
    level_sd: float = 1.0
    outcome: str = "synthetic"
    loadings: Optional[np.ndarray] = None  # (n_units, n_factors); drawn when None
    factors: Optional[np.ndarray] = None  # (n_factors, n_blocks); drawn when None

    def __post_init__(self):
        if self.n_units < 3:
            raise DatagenError(f"need at least 3 units, got {self.n_units}")
        if not 1 <= self.T0 < self.n_blocks:
            raise DatagenError(f"need 1 <= T0 < n_blocks, got T0={self.T0}, n_blocks={self.n_blocks}")
        if self.n_factors < 1 or self.noise_sd < 0 or self.level_sd < 0 or self.block_len_days < 1:
            raise DatagenError("n_factors and block_len_days must be positive, noise_sd and level_sd non-negative")
        if not 0 <= self.factor_ar < 1:
            raise DatagenError(f"factor_ar must be in [0, 1), got {self.factor_ar}")
        if self.loadings is not None and np.shape(self.loadings) != (self.n_units, self.n_factors):
            raise DatagenError(f"loadings must have shape ({self.n_units}, {self.n_factors})")
        if self.factors is not None and np.shape(self.factors) != (self.n_factors, self.n_blocks):
            raise DatagenError(f"factors must have shape ({self.n_factors}, {self.n_blocks})")

    @classmethod
    def from_config(cls, section: DatagenSection, seed: Optional[int] = None) -> "FactorModelSpec":
        values = section.model_dump()
        if seed is not None:
            values["seed"] = seed
        return cls(**values)

    def unit_names(self) -> List[str]:
        n_donors = self.n_units - 1
        width = max(2, len(str(n_donors)))
        return ["treated"] + [f"donor{j:0{width}d}" for j in range(1, n_donors + 1)]


@dataclass(frozen=True)
class GroundTruth:
    effect: np.ndarray  # per block, zero before T0
    injected_effect: float
    loadings: np.ndarray
    factors: np.ndarray
    treated_combination: Optional[np.ndarray] = None  # affine donor weights when treated_in_span


def _draw_factors(rng: XorShift64Star, spec: FactorModelSpec) -> np.ndarray:
    rho = spec.factor_ar
    factors = np.empty((spec.n_factors, spec.n_blocks))
    for k in range(spec.n_factors):
        value = rng.normal() / math.sqrt(1.0 - rho * rho)
        for t in range(spec.n_blocks):
            if t > 0:
                value = rho * value + rng.normal()
            factors[k, t] = value
    return factors


def generate_panel(spec: FactorModelSpec) -> Tuple[Panel, GroundTruth]:
    """
    Draw Y_jt = level_j + loadings_j . factors_t + noise and add the injected
    effect to the treated unit from block T0 on.

    The panel stores the undemeaned Y as raw counts with unit populations,
    so Panel.Y is Y demeaned over the pre-period.
    """
    rng = XorShift64Star(spec.seed)
    n, T = spec.n_units, spec.n_blocks

    factors = np.asarray(spec.factors, dtype=float) if spec.factors is not None else _draw_factors(rng, spec)
    if spec.loadings is not None:
        loadings = np.array(spec.loadings, dtype=float)
    else:
        loadings = rng.normals(n * spec.n_factors).reshape(n, spec.n_factors)

    combination = None
    if spec.treated_in_span:
        raw = np.array([rng.uniform() + 0.1 for _ in range(n - 1)])
        combination = raw / raw.sum()
        loadings[0] = combination @ loadings[1:]

    levels = spec.level_sd * rng.normals(n)
    noise = spec.noise_sd * rng.normals(n * T).reshape(n, T)
    Y = levels[:, None] + loadings @ factors + noise

    effect = np.zeros(T)
    effect[spec.T0:] = spec.injected_effect
    Y[0] += effect

    starts = pd.date_range(pd.Timestamp(spec.start_date), periods=T, freq=f"{spec.block_len_days}D")
    panel = Panel.from_raw(spec.outcome, spec.unit_names(), starts, spec.block_len_days, Y, [1.0] * n, spec.T0)
    logger.debug(f"generated {spec.outcome}: {n} units x {T} blocks, seed {spec.seed}")
    return panel, GroundTruth(effect, spec.injected_effect, loadings, factors, combination)
