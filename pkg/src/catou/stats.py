"""Monte Carlo summary statistics with deterministic bootstrap."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .moments import excess_kurtosis
from .rngs import stream


class McSummary(NamedTuple):
    mean: float
    se: float
    ci_lo: float
    ci_hi: float
    skewness: float
    excess_kurtosis: float
    n: int
    zero_variance: bool


def mc_summary(samples, seed: int = 0, n_boot: int = 1000,
               confidence: float = 0.95) -> McSummary:
    """Mean, standard error, bootstrap CI and shape statistics of a sample.

    Constant samples are flagged (zero_variance) rather than reported with
    meaningless shape statistics.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("mc_summary needs at least 2 samples")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    if var == 0.0:
        return McSummary(mean, 0.0, mean, mean, 0.0, 0.0, x.size, True)
    se = math.sqrt(var / x.size)
    centered = x - mean
    m2 = float(np.mean(centered ** 2))
    m3 = float(np.mean(centered ** 3))
    n = x.size
    # unbiased-ish k-statistic for skewness
    skew = (math.sqrt(n * (n - 1)) / (n - 2)) * m3 / m2 ** 1.5 if n > 2 else 0.0
    kurt = excess_kurtosis(x) if n > 3 else 0.0

    rng = stream(seed, 293)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = x[rng.integers(0, n, size=n)].mean()
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(boots, [alpha, 1.0 - alpha])
    return McSummary(mean, se, float(lo), float(hi), skew, kurt, n, False)


def z_score(estimate: float, analytic: float, se: float) -> float:
    """Standardized discrepancy; infinite when se vanishes but values differ."""
    if se == 0.0:
        return 0.0 if estimate == analytic else math.inf
    return (estimate - analytic) / se


def fit_loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of log y against log x."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)
