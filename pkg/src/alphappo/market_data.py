"""Price/sentiment ingestion, derived risk columns and chronological splits.

A feature frame is a :class:`pandas.DataFrame` indexed by date.  Missing
values are NaN; warm-up rows of rolling quantities are left as NaN rather
than back-filled.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

__all__ = [
    "DataValidationError",
    "CORE_COLUMNS",
    "DEFAULT_SCHEMA",
    "RiskColumns",
    "SplitSpec",
    "ANNUALIZATION",
    "validate_frame",
    "load_csv",
    "frame_from_ohlcv",
    "compute_future_return",
    "compute_risk_columns",
    "build_features",
    "build_split_features",
    "split",
]

ANNUALIZATION = 252

# canonical field -> frame identifier
CORE_COLUMNS = {
    "open": "O_t",
    "high": "High_t",
    "low": "Low_t",
    "close": "C_t",
    "volume": "V_t",
}

# canonical field -> CSV header (matched case-insensitively)
DEFAULT_SCHEMA = {
    "date": "date",
    "open": "open",
    "high": "high",
    "low": "low",
    "close": "close",
    "volume": "volume",
}

MA_FAST = 20
MA_SLOW = 100
VOL_WINDOW = 63
QUANTILE_WINDOW = 126


class DataValidationError(ValueError):
    """Raised when input data violates a frame invariant.

    ``line`` is the 1-based line number in the source file when known.
    """

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        super().__init__(message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataValidationError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )

    def boundary_index(self, row_count: int) -> int:
        return int(math.floor(self.train_fraction * row_count))


@dataclass(frozen=True)
class RiskColumns:
    """Regime, volatility and threshold columns aligned to a frame's dates."""

    columns: pd.DataFrame
    insufficient_history: bool = False

    def __getitem__(self, name: str) -> pd.Series:
        return self.columns[name]


def validate_frame(frame: pd.DataFrame) -> None:
    if not frame.index.is_unique:
        dup = frame.index[frame.index.duplicated()][0]
        raise DataValidationError(f"duplicate date {dup:%Y-%m-%d}")
    if not frame.index.is_monotonic_increasing:
        raise DataValidationError("dates must be strictly increasing")
    if not frame.columns.is_unique:
        raise DataValidationError("column identifiers must be unique")


def _check_ohlcv_row(o, h, lo, c, v, where: str, line: int | None):
    if not (h >= max(o, c) and lo <= min(o, c) and lo <= h):
        raise DataValidationError(
            f"{where}: inconsistent OHLC (open={o}, high={h}, low={lo}, close={c})",
            line=line,
        )
    if v < 0:
        raise DataValidationError(f"{where}: negative volume {v}", line=line, column="volume")


def load_csv(path: str | Path, schema: Mapping[str, str] | None = None) -> pd.DataFrame:
    """Read a daily OHLCV CSV into a feature frame.

    ``schema`` maps the canonical names in :data:`DEFAULT_SCHEMA` to header
    names.  Every other numeric column is carried through under its header.
    Empty cells in extra columns become NaN; core cells must be present.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"{path}: empty file", line=1) from None
        lower = [h.lower() for h in header]
        positions: dict[str, int] = {}
        for field, name in schema.items():
            if name.lower() not in lower:
                raise DataValidationError(
                    f"{path}: missing required column {name!r}", line=1, column=name
                )
            positions[field] = lower.index(name.lower())
        core_idx = set(positions.values())
        extras = [(i, h) for i, h in enumerate(header) if i not in core_idx]
        if len({h for _, h in extras}) != len(extras):
            raise DataValidationError(f"{path}: duplicate column names in header", line=1)

        dates: list[np.datetime64] = []
        core: dict[str, list[float]] = {f: [] for f in CORE_COLUMNS}
        extra_vals: dict[str, list[float]] = {h: [] for _, h in extras}
        seen: dict[np.datetime64, int] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}",
                    line=line_no,
                )
            try:
                date = np.datetime64(row[positions["date"]].strip(), "D")
            except ValueError:
                raise DataValidationError(
                    f"{path}:{line_no}: bad date {row[positions['date']]!r}", line=line_no
                ) from None
            if date in seen:
                raise DataValidationError(
                    f"{path}:{line_no}: duplicate date {date} (first seen on line {seen[date]})",
                    line=line_no,
                )
            seen[date] = line_no
            values = {}
            for field in CORE_COLUMNS:
                cell = row[positions[field]].strip()
                try:
                    values[field] = float(cell)
                except ValueError:
                    raise DataValidationError(
                        f"{path}:{line_no}: cannot parse {field}={cell!r}",
                        line=line_no,
                        column=schema[field],
                    ) from None
            _check_ohlcv_row(
                values["open"], values["high"], values["low"], values["close"], values["volume"],
                where=f"{path}:{line_no} (row {line_no - 1})",
                line=line_no,
            )
            for i, h in extras:
                cell = row[i].strip()
                try:
                    extra_vals[h].append(float(cell) if cell else math.nan)
                except ValueError:
                    raise DataValidationError(
                        f"{path}:{line_no}: cannot parse {h}={cell!r}", line=line_no, column=h
                    ) from None
            dates.append(date)
            for field in CORE_COLUMNS:
                core[field].append(values[field])

    data = {CORE_COLUMNS[f]: core[f] for f in CORE_COLUMNS}
    for h, vals in extra_vals.items():
        if h in data:
            raise DataValidationError(f"{path}: extra column {h!r} clashes with a core identifier")
        data[h] = vals
    frame = pd.DataFrame(data, index=pd.DatetimeIndex(dates, name="date"), dtype=float)
    frame = frame.sort_index(kind="stable")
    frame.insert(4, "Close_t", frame["C_t"])
    validate_frame(frame)
    return frame


def frame_from_ohlcv(dates, open, high, low, close, volume, **extras) -> pd.DataFrame:
    """Build a validated feature frame from in-memory arrays."""
    frame = pd.DataFrame(
        {"O_t": open, "High_t": high, "Low_t": low, "C_t": close, "Close_t": close, "V_t": volume},
        index=pd.DatetimeIndex(pd.to_datetime(dates), name="date"),
        dtype=float,
    )
    for name, values in extras.items():
        frame[name] = np.asarray(values, dtype=float)
    frame = frame.sort_index(kind="stable")
    validate_frame(frame)
    arr = frame[["O_t", "High_t", "Low_t", "C_t", "V_t"]].to_numpy()
    for i, (o, h, lo, c, v) in enumerate(arr):
        _check_ohlcv_row(o, h, lo, c, v, where=f"row {i + 1}", line=None)
    return frame


def compute_future_return(frame: pd.DataFrame) -> pd.DataFrame:
    """Add ``future_return`` = C[t+1]/C[t] - 1; the last row is NaN."""
    close = frame["C_t"].to_numpy(dtype=float)
    if len(close) < 2:
        raise DataValidationError("future_return needs at least 2 rows")
    if np.any(~(close > 0)):
        bad = int(np.argmax(~(close > 0)))
        raise DataValidationError(f"close price must be positive (row {bad + 1})", column="C_t")
    fr = np.full(len(close), np.nan)
    fr[:-1] = (close[1:] - close[:-1]) / close[:-1]
    out = frame.copy()
    out["future_return"] = fr
    return out


def compute_risk_columns(frame: pd.DataFrame, quantile_window: int = QUANTILE_WINDOW,
                         vol_window: int = VOL_WINDOW) -> RiskColumns:
    """Moving-average regime, rolling volatility and rolling close quantiles.

    All windows count rows, not calendar days.  Volatility is the sample
    (ddof=1) standard deviation of ``future_return``; quantiles interpolate
    linearly between order statistics.
    """
    close = frame["C_t"]
    fr = frame["future_return"]
    ma20 = close.rolling(MA_FAST, min_periods=MA_FAST).mean()
    ma100 = close.rolling(MA_SLOW, min_periods=MA_SLOW).mean()
    regime = (ma20 > ma100).astype(float).where(ma20.notna() & ma100.notna())
    sigma_daily = fr.rolling(vol_window, min_periods=vol_window).std(ddof=1)
    qroll = close.rolling(quantile_window, min_periods=quantile_window)
    tau_upper = qroll.quantile(0.75, interpolation="linear")
    tau_lower = qroll.quantile(0.25, interpolation="linear")
    cols = pd.DataFrame(
        {
            "ma20": ma20,
            "ma100": ma100,
            "regime": regime,
            "sigma_daily": sigma_daily,
            "sigma_annual": sigma_daily * math.sqrt(ANNUALIZATION),
            "tau_upper": tau_upper,
            "tau_lower": tau_lower,
        },
        index=frame.index,
    )
    need = max(MA_SLOW, quantile_window, vol_window + 1)
    short = len(frame) < need
    if short:
        warnings.warn(
            f"only {len(frame)} rows; rolling risk columns need {need}",
            RuntimeWarning,
            stacklevel=2,
        )
    return RiskColumns(cols, insufficient_history=short)


def build_features(frame: pd.DataFrame) -> pd.DataFrame:
    """Indicators, future returns and risk columns in one frame."""
    from .indicators import add_indicators

    out = add_indicators(frame)
    out = compute_future_return(out)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        risk = compute_risk_columns(out)
    for name in risk.columns.columns:
        out[name] = risk.columns[name]
    return out


def split(frame: pd.DataFrame, spec: SplitSpec) -> tuple[pd.DataFrame, pd.DataFrame]:
    if len(frame) == 0:
        raise DataValidationError("cannot split an empty frame")
    b = spec.boundary_index(len(frame))
    if b == 0 or b == len(frame):
        raise DataValidationError(
            f"split of {len(frame)} rows at fraction {spec.train_fraction} leaves an empty side"
        )
    return frame.iloc[:b], frame.iloc[b:]


def build_split_features(frame: pd.DataFrame, spec: SplitSpec) -> tuple[pd.DataFrame, int]:
    """Features whose training rows are computed from training prices only.

    ``future_return`` (and the volatility built on it) at the last training
    row would otherwise read the first test close.  Rows before the boundary
    come from the training prefix alone; rows after it from the full
    history, which is legitimate trailing information at test time.
    Returns the combined frame and the boundary index.
    """
    train, _ = split(frame, spec)
    b = len(train)
    full = build_features(frame)
    prefix = build_features(train)
    combined = pd.concat([prefix, full.iloc[b:]])
    return combined[full.columns], b
