import numpy as np
import pandas as pd
import pytest

from alphappo.market_data import frame_from_ohlcv


def make_frame(close, volume=None, **extras):
    close = np.asarray(close, dtype=float)
    n = len(close)
    volume = np.full(n, 1000.0) if volume is None else np.asarray(volume, dtype=float)
    dates = pd.bdate_range("2020-01-01", periods=n)
    return frame_from_ohlcv(dates, close, close * 1.01, close * 0.99, close, volume, **extras)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_csv(path, rows, header="date,open,high,low,close,volume"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


def write_market_csv(path, n_rows=400, seed=0, poison_from=None):
    """Synthetic CSV carrying every column the built-in corpus reads.

    ``poison_from`` replaces rows from that index on with sentinel values
    that are still valid OHLCV.
    """
    from alphappo.synthetic import corpus_market

    f = corpus_market(n_rows, seed=seed)
    f = f.rename(columns={"O_t": "open", "High_t": "high", "Low_t": "low", "C_t": "close", "V_t": "volume"})
    f = f.drop(columns=["Close_t"])
    if poison_from is not None:
        f.iloc[poison_from:, :] = 777.0
        f.iloc[poison_from:, f.columns.get_loc("volume")] = 1.0
    f.to_csv(path, index_label="date", date_format="%Y-%m-%d", float_format="%.17g")
    return path


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s[6:8])):
            terminalreporter.write_line(line)
