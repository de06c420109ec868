"""Loess smoothing for display series."""

import logging
from math import ceil
from typing import Optional, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

LOESS_DEGREE = 1
LOESS_KERNEL = "tricube"
MIN_POINTS = 4


class SmoothingError(ValueError):
    pass


def loess_smooth(series: Union[pd.Series, np.ndarray], span: float = 0.07,
                 x: Optional[np.ndarray] = None) -> Union[pd.Series, np.ndarray]:
    """
    Local linear regression with tricube weights, no robustness iterations.

    At each point the bandwidth is the distance to its ceil(span * n)-th
    nearest neighbour. Returns the same type as ``series``; a Series keeps
    its index.

    Raises:
        SmoothingError: span outside (0, 1] or fewer than 4 points
    """
    if not 0 < span <= 1:
        raise SmoothingError(f"span must be in (0, 1], got {span}")
    y = np.asarray(series, dtype=float)
    n = len(y)
    if n < max(MIN_POINTS, ceil(span * n)):
        raise SmoothingError(f"loess needs at least {MIN_POINTS} points, got {n}")
    x = np.arange(n, dtype=float) if x is None else np.asarray(x, dtype=float)

    r = min(int(ceil(span * n)), n - 1)
    offset = x[None, :] - x[:, None]  # row i is centred on x[i]
    dist = np.abs(offset)
    h = np.clip(np.sort(dist, axis=1)[:, r], 1e-8, np.inf)
    w = np.clip(dist / h[:, None], 0.0, 1.0)
    w = (1.0 - w ** 3) ** 3

    wd = w * offset
    s0 = w.sum(axis=1)
    s1 = wd.sum(axis=1)
    s2 = (wd * offset).sum(axis=1)
    t0 = w @ y
    t1 = wd @ y
    det = s0 * s2 - s1 * s1
    degenerate = np.abs(det) <= 1e-12 * np.maximum(s0 * s2, 1e-300)

    with np.errstate(divide="ignore", invalid="ignore"):
        fitted = (s2 * t0 - s1 * t1) / det
    fitted = np.where(degenerate, t0 / s0, fitted)

    if isinstance(series, pd.Series):
        return pd.Series(fitted, index=series.index, name=series.name)
    return fitted
