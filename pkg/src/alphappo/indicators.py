"""Trailing technical indicators over a close (and volume) series.

Every function returns a float array aligned with its input, NaN during
warm-up.  No value ever depends on a later row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "IndicatorSpec",
    "TABLE1_INDICATORS",
    "sma",
    "ema",
    "momentum",
    "rsi",
    "macd",
    "bollinger",
    "obv",
    "add_indicators",
]

INDICATOR_KINDS = (
    "SMA", "EMA", "Momentum", "RSI", "MACD", "MACD_Signal", "BB_Upper", "BB_Lower", "OBV",
)


@dataclass(frozen=True)
class IndicatorSpec:
    kind: str
    windows: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in INDICATOR_KINDS:
            raise ValueError(f"unknown indicator kind {self.kind!r}")
        if any(w < 1 for w in self.windows):
            raise ValueError("indicator windows must be >= 1")
        if self.kind in ("MACD", "MACD_Signal") and self.windows[0] >= self.windows[1]:
            raise ValueError("MACD fast window must be shorter than the slow window")


TABLE1_INDICATORS = {
    "SMA_5": IndicatorSpec("SMA", (5,)),
    "SMA_20": IndicatorSpec("SMA", (20,)),
    "EMA_10": IndicatorSpec("EMA", (10,)),
    "Momentum_3": IndicatorSpec("Momentum", (3,)),
    "Momentum_10": IndicatorSpec("Momentum", (10,)),
    "RSI_14": IndicatorSpec("RSI", (14,)),
    "MACD": IndicatorSpec("MACD", (12, 26, 9)),
    "MACD_Signal": IndicatorSpec("MACD_Signal", (12, 26, 9)),
    "BB_Upper": IndicatorSpec("BB_Upper", (20,)),
    "BB_Lower": IndicatorSpec("BB_Lower", (20,)),
    "OBV": IndicatorSpec("OBV"),
}


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _check_window(window: int, minimum: int = 1):
    if int(window) != window or window < minimum:
        raise ValueError(f"window must be an integer >= {minimum}, got {window}")


def sma(close, window: int) -> np.ndarray:
    x = _as_float(close)
    _check_window(window)
    out = np.full(len(x), np.nan)
    if window <= len(x):
        out[window - 1:] = sliding_window_view(x, window).mean(axis=1)
    return out


def ema(close, window: int) -> np.ndarray:
    """Exponential moving average with alpha = 2/(window+1).

    The recursion is seeded with the simple mean of the first ``window``
    valid values, so leading NaNs (e.g. from an upstream indicator) shift
    the seed instead of poisoning it.
    """
    x = _as_float(close)
    _check_window(window)
    out = np.full(len(x), np.nan)
    valid = np.flatnonzero(~np.isnan(x))
    if len(valid) == 0:
        return out
    first = valid[0]
    seed_end = first + window - 1
    if seed_end >= len(x) or np.isnan(x[first:seed_end + 1]).any():
        return out
    alpha = 2.0 / (window + 1)
    prev = x[first:seed_end + 1].mean()
    out[seed_end] = prev
    for t in range(seed_end + 1, len(x)):
        if np.isnan(x[t]):
            continue
        prev = alpha * x[t] + (1.0 - alpha) * prev
        out[t] = prev
    return out


def momentum(close, window: int) -> np.ndarray:
    """Price difference against ``window`` rows earlier."""
    x = _as_float(close)
    _check_window(window)
    out = np.full(len(x), np.nan)
    if window < len(x):
        out[window:] = x[window:] - x[:-window]
    return out


def rsi(close, window: int = 14) -> np.ndarray:
    """Wilder RSI.

    Average gain/loss is seeded with the plain mean of the first ``window``
    price changes and then smoothed as avg = (avg*(n-1) + x)/n.  A window
    with no losses gives 100, no gains gives 0, no movement at all gives 50.
    """
    x = _as_float(close)
    _check_window(window)
    out = np.full(len(x), np.nan)
    if len(x) <= window:
        return out
    delta = np.diff(x)
    gain = np.where(delta > 0, delta, 0.0)
    loss = np.where(delta < 0, -delta, 0.0)
    avg_gain = gain[:window].mean()
    avg_loss = loss[:window].mean()
    out[window] = _rsi_value(avg_gain, avg_loss)
    for t in range(window + 1, len(x)):
        avg_gain = (avg_gain * (window - 1) + gain[t - 1]) / window
        avg_loss = (avg_loss * (window - 1) + loss[t - 1]) / window
        out[t] = _rsi_value(avg_gain, avg_loss)
    return out


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0.0:
        return 50.0 if avg_gain == 0.0 else 100.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


def macd(close, fast: int = 12, slow: int = 26, signal: int = 9) -> tuple[np.ndarray, np.ndarray]:
    if fast >= slow:
        raise ValueError("MACD fast window must be shorter than the slow window")
    line = ema(close, fast) - ema(close, slow)
    return line, ema(line, signal)


def bollinger(close, window: int = 20, k: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """SMA plus/minus ``k`` sample standard deviations."""
    x = _as_float(close)
    _check_window(window, minimum=2)
    if k < 0:
        raise ValueError("k must be non-negative")
    upper = np.full(len(x), np.nan)
    lower = np.full(len(x), np.nan)
    if window <= len(x):
        win = sliding_window_view(x, window)
        mid = win.mean(axis=1)
        sd = win.std(axis=1, ddof=1)
        upper[window - 1:] = mid + k * sd
        lower[window - 1:] = mid - k * sd
    return upper, lower


def obv(close, volume) -> np.ndarray:
    c = _as_float(close)
    v = _as_float(volume)
    if c.shape != v.shape:
        raise ValueError("close and volume must have equal length")
    if len(c) == 0:
        return np.array([])
    signed = np.zeros(len(c))
    signed[1:] = v[1:] * np.sign(c[1:] - c[:-1])
    return np.cumsum(signed)


def add_indicators(frame: pd.DataFrame) -> pd.DataFrame:
    """Return a copy of ``frame`` with the standard indicator columns added."""
    close = frame["C_t"].to_numpy(dtype=float)
    out = frame.copy()
    out["SMA_5"] = sma(close, 5)
    out["SMA_20"] = sma(close, 20)
    out["EMA_10"] = ema(close, 10)
    out["Momentum_3"] = momentum(close, 3)
    out["Momentum_10"] = momentum(close, 10)
    out["RSI_14"] = rsi(close, 14)
    out["MACD"], out["MACD_Signal"] = macd(close, 12, 26, 9)
    out["BB_Upper"], out["BB_Lower"] = bollinger(close, 20, 2.0)
    out["OBV"] = obv(close, frame["V_t"].to_numpy(dtype=float))
    return out
