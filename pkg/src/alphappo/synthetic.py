"""Seeded synthetic markets for experiments and tests."""
from __future__ import annotations

import numpy as np
import pandas as pd

from .alpha_dsl import AlphaExpr, Name
from .market_data import build_features, frame_from_ohlcv

__all__ = ["random_ohlcv", "corpus_market", "oracle_alpha_market"]

INDEX_LEVELS = {"Close_Nikkei225": 28000.0, "Close_SP500": 4000.0, "Close_HSI": 20000.0}
POLARITY_COLUMNS = ("Apple_polarity", "HSBC_polarity", "Pepsi_polarity", "Tencent_polarity")


def random_ohlcv(n_rows: int, seed: int = 0, drift: float = 0.0003, vol: float = 0.012,
                 start: str = "2016-01-04", extras: dict | None = None) -> pd.DataFrame:
    """Geometric random-walk closes with consistent open/high/low/volume."""
    rng = np.random.default_rng(seed)
    rets = drift + vol * rng.standard_normal(n_rows)
    close = 100.0 * np.exp(np.cumsum(rets))
    open_ = close * np.exp(0.3 * vol * rng.standard_normal(n_rows))
    spread = np.abs(vol * rng.standard_normal((2, n_rows)))
    high = np.maximum(open_, close) * (1.0 + spread[0])
    low = np.minimum(open_, close) * (1.0 - spread[1])
    volume = np.round(rng.lognormal(14.0, 0.3, n_rows))
    dates = pd.bdate_range(start, periods=n_rows)
    return frame_from_ohlcv(dates, open_, high, low, close, volume, **(extras or {}))


def corpus_market(n_rows: int, seed: int = 0) -> pd.DataFrame:
    """Raw OHLCV plus every extra column the built-in corpus references.

    Index closes are independent random walks; polarity scores are AR(1)
    noise clipped to [-1, 1] and ``S_t`` is their cross-company mean.
    """
    rng = np.random.default_rng(seed + 104729)
    extras: dict[str, np.ndarray] = {}
    for name, level in INDEX_LEVELS.items():
        extras[name] = level * np.exp(np.cumsum(0.01 * rng.standard_normal(n_rows)))
    shocks = rng.standard_normal((n_rows, len(POLARITY_COLUMNS)))
    pol = np.empty_like(shocks)
    pol[0] = 0.3 * shocks[0]
    for t in range(1, n_rows):
        pol[t] = 0.8 * pol[t - 1] + 0.3 * shocks[t]
    pol = np.clip(pol, -1.0, 1.0)
    for j, name in enumerate(POLARITY_COLUMNS):
        extras[name] = pol[:, j]
    extras["S_t"] = pol.mean(axis=1)
    return random_ohlcv(n_rows, seed, extras=extras)


def oracle_alpha_market(n_rows: int = 2000, n_noise: int = 49, seed: int = 0,
                        noise_seed: int | None = None) -> tuple[pd.DataFrame, list[AlphaExpr]]:
    """A feature frame plus alphas where the first alpha is the next-period return.

    The remaining ``n_noise`` alphas read independent standard-normal
    columns ``noise_1..noise_k``.
    """
    frame = build_features(random_ohlcv(n_rows, seed))
    rng = np.random.default_rng(seed + 7919 if noise_seed is None else noise_seed)
    noise = rng.standard_normal((n_rows, n_noise))
    for j in range(n_noise):
        frame[f"noise_{j + 1}"] = noise[:, j]
    exprs = [AlphaExpr("oracle_t", Name("future_return"), "oracle_t = future_return")]
    exprs += [AlphaExpr(f"noise{j + 1}_t", Name(f"noise_{j + 1}"), f"noise{j + 1}_t = noise_{j + 1}")
              for j in range(n_noise)]
    return frame, exprs
