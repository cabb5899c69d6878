"""Indicators against plain-Python recursions written from the textbook definitions."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphappo.indicators import (
    IndicatorSpec,
    add_indicators,
    bollinger,
    ema,
    macd,
    momentum,
    obv,
    rsi,
    sma,
)
from conftest import make_frame

NAN = float("nan")


# -- oracles -----------------------------------------------------------------

def sma_oracle(x, w):
    return [NAN if i < w - 1 else sum(x[i - w + 1:i + 1]) / w for i in range(len(x))]


def ema_oracle(x, w):
    out = [NAN] * len(x)
    valid = [i for i, v in enumerate(x) if not math.isnan(v)]
    if not valid:
        return out
    s = valid[0] + w - 1
    if s >= len(x):
        return out
    a = 2.0 / (w + 1)
    prev = sum(x[valid[0]:s + 1]) / w
    out[s] = prev
    for i in range(s + 1, len(x)):
        prev = a * x[i] + (1 - a) * prev
        out[i] = prev
    return out


def rsi_oracle(x, w):
    out = [NAN] * len(x)
    gains = [max(x[i] - x[i - 1], 0.0) for i in range(1, len(x))]
    losses = [max(x[i - 1] - x[i], 0.0) for i in range(1, len(x))]
    if len(gains) < w:
        return out
    ag = sum(gains[:w]) / w
    al = sum(losses[:w]) / w

    def val(g, l_):
        if l_ == 0:
            return 50.0 if g == 0 else 100.0
        return 100 - 100 / (1 + g / l_)

    out[w] = val(ag, al)
    for i in range(w + 1, len(x)):
        ag = (ag * (w - 1) + gains[i - 1]) / w
        al = (al * (w - 1) + losses[i - 1]) / w
        out[i] = val(ag, al)
    return out


def sample_std(v):
    m = sum(v) / len(v)
    return math.sqrt(sum((a - m) ** 2 for a in v) / (len(v) - 1))


def obv_oracle(c, v):
    out = [0.0]
    for i in range(1, len(c)):
        s = (c[i] > c[i - 1]) - (c[i] < c[i - 1])
        out.append(out[-1] + s * v[i])
    return out


def assert_close(actual, expected, rel=1e-9):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    np.testing.assert_array_equal(np.isnan(actual), np.isnan(expected))
    ok = ~np.isnan(expected)
    np.testing.assert_allclose(actual[ok], expected[ok], rtol=rel, atol=0)


def random_walk(n=200, seed=0):
    r = np.random.default_rng(seed)
    return (100 + np.cumsum(r.standard_normal(n))).tolist()


# -- examples ---------------------------------------------------------------

def test_sma_examples():
    assert_close(sma([1, 2, 3], 3), [NAN, NAN, 2])
    assert_close(sma([1, 2, 3, 4], 2), [NAN, 1.5, 2.5, 3.5])
    assert np.isnan(sma([1, 2], 5)).all()
    assert_close(sma(np.full(30, 7.0), 5)[4:], np.full(26, 7.0), rel=0)


def test_ema_examples():
    assert_close(ema(np.full(20, 3.0), 5)[4:], np.full(16, 3.0), rel=1e-15)
    x = [10.0, 11.0, 12.0, 13.0, 9.5]
    assert_close(ema(x, 1), x, rel=0)
    # by hand: seed = 11 at index 2, alpha = 0.5 -> 12, then 10.75
    assert_close(ema([10, 11, 12, 13], 3), [NAN, NAN, 11.0, 12.0], rel=1e-15)
    assert ema([10, 11, 12, 13, 9.5], 3)[-1] == pytest.approx(0.5 * 9.5 + 0.5 * 12.0, rel=1e-15)


def test_momentum_examples():
    assert_close(momentum([1, 2, 3, 4], 2), [NAN, NAN, 2, 2], rel=0)
    assert (momentum(np.full(10, 5.0), 3)[3:] == 0).all()
    assert (momentum(np.arange(1.0, 30.0) ** 1.5, 3)[3:] > 0).all()


def test_rsi_examples():
    up = np.arange(1.0, 40.0)
    assert (rsi(up, 14)[14:] == 100).all()
    assert (rsi(up[::-1], 14)[14:] == 0).all()
    alt = np.array([10.0 + (i % 2) for i in range(600)])
    r = rsi(alt, 14)
    assert_close(r, rsi_oracle(alt.tolist(), 14), rel=1e-12)
    # 7 rises and 7 falls of equal size in the seed window
    assert r[14] == pytest.approx(50.0, abs=1e-12)
    # afterwards Wilder smoothing settles into a two-cycle symmetric about 50
    assert np.all(np.abs(r[14:] - 50) < 5)
    assert r[-1] + r[-2] == pytest.approx(100.0, abs=1e-9)


def test_macd_examples():
    line, sig = macd(np.full(80, 42.0))
    assert np.nanmax(np.abs(line)) < 1e-12 and np.nanmax(np.abs(sig)) < 1e-12
    x = np.array(random_walk(120, 3))
    line, sig = macd(x, 12, 26, 9)
    np.testing.assert_array_equal(line, ema(x, 12) - ema(x, 26))
    np.testing.assert_array_equal(sig, ema(line, 9))


def test_macd_of_ramp_converges_to_closed_form():
    # for x_t = c*t the EMA lags by c*(1-a)/a = c*(w-1)/2, so macd -> c*(slow-fast)/2
    x = 0.5 * np.arange(600.0)
    line, sig = macd(x, 12, 26, 9)
    assert line[-1] == pytest.approx(0.5 * (26 - 12) / 2, rel=1e-9)
    assert sig[-1] == pytest.approx(0.5 * (26 - 12) / 2, rel=1e-9)


def test_bollinger_examples():
    up, lo = bollinger([1.0, 2.0, 3.0], 3, 2.0)
    assert up[2] == pytest.approx(4.0) and lo[2] == pytest.approx(0.0)
    up, lo = bollinger(np.full(25, 9.0), 20)
    assert_close(up[19:], np.full(6, 9.0), rel=0)
    assert_close(lo[19:], np.full(6, 9.0), rel=0)


def test_obv_examples():
    assert obv(np.full(5, 3.0), np.full(5, 9.0)).tolist() == [0, 0, 0, 0, 0]
    assert obv(np.arange(5.0), np.full(5, 10.0)).tolist() == [0, 10, 20, 30, 40]
    assert obv([1, 2, 1], [5, 5, 5]).tolist() == [0, 5, 0]


def test_indicator_spec_validation():
    with pytest.raises(ValueError):
        IndicatorSpec("MACD", (26, 12, 9))
    with pytest.raises(ValueError):
        IndicatorSpec("SMA", (0,))
    with pytest.raises(ValueError):
        macd(np.arange(50.0), 26, 12)


# -- oracle sweeps -----------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_all_indicators_match_oracles(seed):
    x = random_walk(200, seed)
    vol = np.random.default_rng(seed + 100).integers(1, 1000, 200).astype(float)
    for w in (1, 5, 20):
        assert_close(sma(x, w), sma_oracle(x, w))
        assert_close(ema(x, w), ema_oracle(x, w))
    for w in (3, 10):
        assert_close(momentum(x, w), [NAN] * w + [x[i] - x[i - w] for i in range(w, 200)])
    assert_close(rsi(x, 14), rsi_oracle(x, 14))
    line, sig = macd(x)
    line_o = [a - b for a, b in zip(ema_oracle(x, 12), ema_oracle(x, 26))]
    assert_close(line, line_o)
    assert_close(sig, ema_oracle(line_o, 9))
    up, lo = bollinger(x, 20, 2.0)
    mid = sma_oracle(x, 20)
    sd = [NAN] * 19 + [sample_std(x[i - 19:i + 1]) for i in range(19, 200)]
    assert_close(up, [m + 2 * s for m, s in zip(mid, sd)])
    assert_close(lo, [m - 2 * s for m, s in zip(mid, sd)])
    assert_close(obv(x, vol), obv_oracle(x, vol.tolist()), rel=0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1.0, 1000.0), min_size=20, max_size=80))
def test_rsi_bounded_and_bands_ordered(xs):
    r = rsi(xs, 14)
    ok = ~np.isnan(r)
    assert np.all((r[ok] >= 0) & (r[ok] <= 100))
    up, lo = bollinger(xs, 10)
    ok = ~np.isnan(up)
    assert np.all(up[ok] >= lo[ok])


@settings(max_examples=20, deadline=None)
@given(t=st.integers(0, 148), scale=st.floats(0.2, 5.0))
def test_indicators_are_trailing(t, scale):
    close = np.array(random_walk(150, 11))
    base = add_indicators(make_frame(close))
    bumped = close.copy()
    bumped[t + 1:] *= scale
    other = add_indicators(make_frame(bumped))
    np.testing.assert_array_equal(base.iloc[:t + 1].to_numpy(), other.iloc[:t + 1].to_numpy())


def test_add_indicators_columns():
    frame = add_indicators(make_frame(random_walk(60)))
    for name in ("SMA_5", "SMA_20", "EMA_10", "Momentum_3", "Momentum_10", "RSI_14",
                 "MACD", "MACD_Signal", "BB_Upper", "BB_Lower", "OBV"):
        assert name in frame.columns
