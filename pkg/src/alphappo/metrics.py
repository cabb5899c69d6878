"""Signal and strategy evaluation metrics.

Undefined values (zero variance, too few rows) come back as ``nan`` so that
averages across alphas or runs never silently include a fabricated zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "MetricReport",
    "information_coefficient",
    "equal_frequency_bins",
    "mutual_information",
    "cumulative_return",
    "sharpe_ratio",
    "max_drawdown",
    "drawdown_series",
]

DEFAULT_MI_BINS = 16


@dataclass
class MetricReport:
    ic: dict[str, float] = field(default_factory=dict)
    mi: dict[str, float] = field(default_factory=dict)
    cum_return: float = math.nan
    sharpe: float = math.nan
    max_drawdown: float = math.nan


def _joint_valid(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    ok = np.isfinite(x) & np.isfinite(y)
    return x[ok], y[ok]


def information_coefficient(signal, future_return) -> float:
    """Spearman rank correlation over jointly valid rows (average ranks for ties)."""
    x, y = _joint_valid(signal, future_return)
    if len(x) < 3:
        raise ValueError(f"IC needs at least 3 jointly valid rows, got {len(x)}")
    rx = rankdata(x)
    ry = rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(np.dot(rx, rx) * np.dot(ry, ry))
    if denom == 0:
        return math.nan
    return float(np.clip(np.dot(rx, ry) / denom, -1.0, 1.0))


def equal_frequency_bins(x: np.ndarray, bins: int) -> np.ndarray:
    """Bin labels 0..bins-1 cut at the empirical quantiles of ``x``.

    Values equal to a cut point fall in the lower bin, so tied values always
    share a bin.
    """
    edges = np.quantile(x, np.linspace(0.0, 1.0, bins + 1)[1:-1])
    return np.searchsorted(edges, x, side="left")


def mutual_information(x, y, bins: int = DEFAULT_MI_BINS) -> float:
    """Plug-in mutual information (nats) of equal-frequency discretizations."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    x, y = _joint_valid(x, y)
    if len(x) < bins:
        raise ValueError(f"need at least {bins} jointly valid rows, got {len(x)}")
    bx = equal_frequency_bins(x, bins)
    by = equal_frequency_bins(y, bins)
    joint = np.zeros((bins, bins))
    np.add.at(joint, (bx, by), 1.0)
    pxy = joint / len(x)
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = np.sum(pxy[nz] * np.log(pxy[nz] / (px @ py)[nz]))
    return max(float(mi), 0.0)


def cumulative_return(returns) -> float:
    r = np.asarray(returns, dtype=float)
    if np.any(r <= -1.0):
        raise ValueError("a return <= -100% makes compounding undefined")
    return float(np.prod(1.0 + r) - 1.0)


def sharpe_ratio(returns, periods_per_year: int = 252, risk_free: float = 0.0) -> float:
    """Annualized mean excess return over sample standard deviation."""
    r = np.asarray(returns, dtype=float) - risk_free
    if len(r) < 2:
        raise ValueError("Sharpe ratio needs at least 2 returns")
    sd = r.std(ddof=1)
    if np.ptp(r) == 0 or not sd > 0:
        return math.nan
    return float(r.mean() / sd * math.sqrt(periods_per_year))


def drawdown_series(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return v / np.maximum.accumulate(v) - 1.0


def max_drawdown(values) -> float:
    """Worst value/running-peak - 1; zero or negative."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        raise ValueError("max_drawdown needs at least one value")
    if np.any(~(v > 0)):
        raise ValueError("portfolio values must be positive")
    return float(min(drawdown_series(v).min(), 0.0))
