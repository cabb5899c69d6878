"""Single-asset alpha-weighting environment with adaptive risk controls.

Each step the agent proposes one raw weight per alpha.  The weights are
clipped to [-1, 1] and L1-normalized, combined with the standardized alphas
into a composite signal, turned into a position by a threshold rule, gated
by a moving-average regime filter and scaled towards a volatility target.
The reward is the position's next-period return less a proportional
turnover cost.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from . import metrics
from .alpha_dsl import AlphaMatrix
from .market_data import compute_risk_columns

__all__ = [
    "EPS",
    "EnvConfig",
    "EnvState",
    "WeightVector",
    "StepInputs",
    "Ledger",
    "StepResult",
    "MissingInputError",
    "BacktestReport",
    "normalize_weights",
    "composite_alpha",
    "volatility_scale",
    "size_position",
    "trade_step",
    "AlphaTradingEnv",
    "run_backtest",
    "run_equal_weighted",
]

EPS = 1e-8
OBS_DIM = 8
THRESHOLD_MODES = ("price_quantile", "alpha_quantile")


class MissingInputError(ValueError):
    def __init__(self, column: str, date=None):
        where = f" at {pd.Timestamp(date):%Y-%m-%d}" if date is not None else ""
        super().__init__(f"required input {column!r} is missing{where}")
        self.column = column
        self.date = date


@dataclass(frozen=True)
class EnvConfig:
    sigma_target: float = 0.15
    lambda_cost: float = 0.001
    v_max: float = 2.0
    quantile_window: int = 126
    vol_window: int = 63
    threshold_mode: str = "alpha_quantile"

    def __post_init__(self):
        if not self.sigma_target > 0:
            raise ValueError("sigma_target must be positive")
        if self.lambda_cost < 0:
            raise ValueError("lambda_cost must be non-negative")
        if self.v_max < 1:
            raise ValueError("v_max must be >= 1")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.quantile_window < 1 or self.vol_window < 2:
            raise ValueError("rolling windows too short")


@dataclass(frozen=True)
class WeightVector:
    raw: np.ndarray
    clipped: np.ndarray
    normalized: np.ndarray


@dataclass(frozen=True)
class EnvState:
    ohlcv: np.ndarray
    prev_position: float
    regime: float
    sigma_daily: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.ohlcv, [self.prev_position, self.regime, self.sigma_daily]])


@dataclass(frozen=True)
class StepInputs:
    """Everything one trading step reads from row t."""

    alphas: np.ndarray
    tau_upper: float
    tau_lower: float
    regime: float
    sigma_annual: float
    future_return: float
    date: object = None


@dataclass(frozen=True)
class Ledger:
    value: float = 1.0
    peak: float = 1.0


@dataclass(frozen=True)
class StepResult:
    position: float
    reward: float
    cost: float
    portfolio_value: float
    drawdown: float
    composite_alpha: float
    tau_upper: float
    tau_lower: float


def normalize_weights(raw) -> WeightVector:
    """Clip to [-1, 1] then divide by (L1 norm + 1e-8)."""
    raw = np.asarray(raw, dtype=float).ravel()
    if raw.size == 0:
        raise ValueError("weight vector is empty")
    if not np.all(np.isfinite(raw)):
        raise ValueError("weight vector contains non-finite entries")
    clipped = np.clip(raw, -1.0, 1.0)
    normalized = clipped / (np.abs(clipped).sum() + EPS)
    return WeightVector(raw, clipped, normalized)


def composite_alpha(weights: WeightVector, alphas_at_t) -> float:
    a = np.asarray(alphas_at_t, dtype=float)
    if a.shape != weights.normalized.shape:
        raise ValueError(f"{a.size} alphas for {weights.normalized.size} weights")
    return float(np.dot(weights.normalized, a))


def volatility_scale(sigma_annual: float, config: EnvConfig) -> float:
    """min(v_max, target/sigma); zero realized volatility maps to v_max."""
    if sigma_annual <= 0:
        return config.v_max
    return min(config.v_max, config.sigma_target / sigma_annual)


def size_position(composite: float, tau_upper: float, tau_lower: float, regime: float,
                  sigma_annual: float, config: EnvConfig) -> float:
    if composite > tau_upper:
        base = min(1.0, 2.0 * (composite - tau_upper))
    elif composite < tau_lower:
        base = max(-1.0, 2.0 * (composite - tau_lower))
    else:
        base = 0.0
    if regime == 0 and base > 0:
        base = 0.0
    return base * volatility_scale(sigma_annual, config)


def _alpha_thresholds(history: np.ndarray, weights: WeightVector) -> tuple[float, float]:
    composite_hist = history @ weights.normalized
    return float(np.quantile(composite_hist, 0.75)), float(np.quantile(composite_hist, 0.25))


def trade_step(prev_position: float, weights: WeightVector, row: StepInputs, ledger: Ledger,
               config: EnvConfig) -> tuple[StepResult, Ledger]:
    """Composite signal, position, cost, reward and book-keeping for one date."""
    for name in ("tau_upper", "tau_lower", "regime", "sigma_annual", "future_return"):
        if not math.isfinite(getattr(row, name)):
            raise MissingInputError(name, row.date)
    if not np.all(np.isfinite(row.alphas)):
        raise MissingInputError("alphas", row.date)
    comp = composite_alpha(weights, row.alphas)
    p = size_position(comp, row.tau_upper, row.tau_lower, row.regime, row.sigma_annual, config)
    cost = config.lambda_cost * abs(p - prev_position)
    reward = p * row.future_return - cost
    value = ledger.value * (1.0 + reward)
    peak = max(ledger.peak, value)
    dd = (value - peak) / peak
    result = StepResult(p, reward, cost, value, dd, comp, row.tau_upper, row.tau_lower)
    return result, Ledger(value, peak)


class AlphaTradingEnv:
    """Stateful episode over a contiguous block of dates.

    ``alphas`` holds standardized alpha values (rows keyed by
    ``alpha_dates``); it may start earlier than ``frame`` so that rolling
    composite thresholds can look back past the first traded date.  Risk
    columns already present in ``frame`` are used as is, otherwise they are
    computed from ``C_t`` and ``future_return``.

    One episode runs from the first date on which every input is defined
    (or ``start``, whichever is later) to the last date with a known next
    return.
    """

    def __init__(self, alphas, frame: pd.DataFrame, config: EnvConfig | None = None,
                 alpha_dates=None, start=None, names=None):
        self.config = config or EnvConfig()
        if isinstance(alphas, AlphaMatrix):
            alpha_dates = alphas.dates if alpha_dates is None else alpha_dates
            names = alphas.names if names is None else names
            alphas = alphas.standardized
        alphas = np.asarray(alphas, dtype=float)
        if alphas.ndim != 2:
            raise ValueError("alphas must be a 2-D array")
        if alpha_dates is None:
            if len(alphas) != len(frame):
                raise ValueError("alphas and frame differ in length and no dates were given")
            alpha_dates = frame.index
        alpha_dates = pd.DatetimeIndex(alpha_dates)
        self.names = tuple(names) if names is not None else tuple(f"alpha{i}" for i in range(alphas.shape[1]))
        self.n_alphas = alphas.shape[1]
        self.frame = frame
        self.dates = frame.index
        pos = alpha_dates.get_indexer(frame.index)
        if np.any(pos < 0):
            raise ValueError("every frame date must have an alpha row")
        self._alphas = alphas
        self._alpha_pos = pos

        cfg = self.config
        needed = {"regime", "sigma_daily", "sigma_annual", "tau_upper", "tau_lower"}
        if needed.issubset(frame.columns):
            risk = frame
        else:
            risk = compute_risk_columns(frame, quantile_window=cfg.quantile_window,
                                        vol_window=cfg.vol_window).columns
        self._ohlcv = frame[["O_t", "High_t", "Low_t", "C_t", "V_t"]].to_numpy(dtype=float)
        self._regime = risk["regime"].to_numpy(dtype=float)
        self._sigma_daily = risk["sigma_daily"].to_numpy(dtype=float)
        self._sigma_annual = risk["sigma_annual"].to_numpy(dtype=float)
        self._tau_upper = risk["tau_upper"].to_numpy(dtype=float)
        self._tau_lower = risk["tau_lower"].to_numpy(dtype=float)
        self._future_return = frame["future_return"].to_numpy(dtype=float)

        ok = (
            np.isfinite(self._ohlcv).all(axis=1)
            & np.isfinite(self._regime)
            & np.isfinite(self._sigma_daily)
            & np.isfinite(self._sigma_annual)
            & np.isfinite(self._future_return)
            & np.isfinite(alphas[pos]).all(axis=1)
        )
        if cfg.threshold_mode == "price_quantile":
            ok &= np.isfinite(self._tau_upper) & np.isfinite(self._tau_lower)
        else:
            W = cfg.quantile_window
            valid_rows = np.isfinite(alphas).all(axis=1).astype(int)
            csum = np.concatenate([[0], np.cumsum(valid_rows)])
            has_window = (pos >= W - 1) & (csum[pos + 1] - csum[np.maximum(pos + 1 - W, 0)] == W)
            ok &= has_window
        first = 0
        if start is not None:
            first = start if isinstance(start, (int, np.integer)) else int(self.dates.searchsorted(pd.Timestamp(start)))
        cand = np.flatnonzero(ok[first:])
        if len(cand) == 0:
            raise MissingInputError("warm-up", None)
        self.start = first + int(cand[0])
        fr_ok = np.flatnonzero(np.isfinite(self._future_return))
        self.stop = int(fr_ok[-1]) + 1
        if self.stop <= self.start:
            raise MissingInputError("future_return", None)
        self.reset()

    @property
    def n_steps(self) -> int:
        return self.stop - self.start

    def observation(self, t: int, prev_position: float) -> np.ndarray:
        return EnvState(self._ohlcv[t], prev_position, self._regime[t], self._sigma_daily[t]).as_array()

    def market_observations(self) -> np.ndarray:
        """Observation rows of the episode with the previous-position slot zeroed."""
        rows = np.arange(self.start, self.stop)
        obs = np.zeros((len(rows), OBS_DIM))
        obs[:, :5] = self._ohlcv[rows]
        obs[:, 6] = self._regime[rows]
        obs[:, 7] = self._sigma_daily[rows]
        return obs

    def inputs(self, t: int, weights: WeightVector | None = None) -> StepInputs:
        k = self._alpha_pos[t]
        if self.config.threshold_mode == "alpha_quantile":
            W = self.config.quantile_window
            tu, tl = _alpha_thresholds(self._alphas[k - W + 1:k + 1], weights)
        else:
            tu, tl = self._tau_upper[t], self._tau_lower[t]
        return StepInputs(
            alphas=self._alphas[k],
            tau_upper=tu,
            tau_lower=tl,
            regime=self._regime[t],
            sigma_annual=self._sigma_annual[t],
            future_return=self._future_return[t],
            date=self.dates[t],
        )

    def reset(self) -> np.ndarray:
        self.t = self.start
        self.position = 0.0
        self.ledger = Ledger()
        return self.observation(self.t, self.position)

    def step(self, action) -> tuple[np.ndarray, float, bool, StepResult]:
        if self.t >= self.stop:
            raise RuntimeError("episode finished; call reset()")
        weights = normalize_weights(action)
        if weights.normalized.size != self.n_alphas:
            raise ValueError(f"action has {weights.normalized.size} entries, expected {self.n_alphas}")
        result, self.ledger = trade_step(self.position, weights, self.inputs(self.t, weights),
                                         self.ledger, self.config)
        self.position = result.position
        self.t += 1
        done = self.t >= self.stop
        obs = self.observation(min(self.t, self.stop - 1) if done else self.t, self.position)
        return obs, result.reward, done, result


@dataclass
class BacktestReport:
    dates: list
    position: np.ndarray
    composite: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    value: np.ndarray
    drawdown: np.ndarray
    config: EnvConfig
    summary: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.reward)

    def to_dict(self) -> dict:
        def clean(x):
            x = float(x)
            return x if math.isfinite(x) else None

        return {
            "summary": {k: (clean(v) if isinstance(v, float) else v) for k, v in self.summary.items()},
            "config": asdict(self.config),
            "steps": [
                {
                    "date": pd.Timestamp(d).strftime("%Y-%m-%d"),
                    "position": clean(p),
                    "composite": clean(c),
                    "reward": clean(r),
                    "cost": clean(k),
                    "value": clean(v),
                    "drawdown": clean(dd),
                }
                for d, p, c, r, k, v, dd in zip(self.dates, self.position, self.composite, self.reward,
                                                self.cost, self.value, self.drawdown)
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def summarize(rewards: np.ndarray, values: np.ndarray) -> dict:
    n = len(rewards)
    return {
        "cum_return": metrics.cumulative_return(rewards) if n else 0.0,
        "sharpe": metrics.sharpe_ratio(rewards) if n >= 2 else math.nan,
        "max_drawdown": metrics.max_drawdown(np.concatenate([[1.0], values])),
        "mean_reward": float(np.mean(rewards)) if n else math.nan,
        "n_steps": n,
    }


def run_episode(env: AlphaTradingEnv, policy: Callable[[np.ndarray], np.ndarray]) -> BacktestReport:
    obs = env.reset()
    results: list[StepResult] = []
    done = False
    while not done:
        obs, _, done, res = env.step(policy(obs))
        results.append(res)
    arr = lambda f: np.array([getattr(r, f) for r in results])  # noqa: E731
    rewards = arr("reward")
    values = arr("portfolio_value")
    return BacktestReport(
        dates=list(env.dates[env.start:env.stop]),
        position=arr("position"),
        composite=arr("composite_alpha"),
        reward=rewards,
        cost=arr("cost"),
        value=values,
        drawdown=arr("drawdown"),
        config=env.config,
        summary=summarize(rewards, values),
    )


def run_backtest(policy: Callable[[np.ndarray], np.ndarray], matrix, frame: pd.DataFrame,
                 config: EnvConfig | None = None, start=None) -> BacktestReport:
    """Trade ``frame`` with weights from ``policy(observation)``."""
    return run_episode(AlphaTradingEnv(matrix, frame, config, start=start), policy)


def run_equal_weighted(matrix, frame: pd.DataFrame, config: EnvConfig | None = None,
                       start=None) -> BacktestReport:
    env = AlphaTradingEnv(matrix, frame, config, start=start)
    uniform = np.full(env.n_alphas, 1.0 / env.n_alphas)
    return run_episode(env, lambda obs: uniform)
