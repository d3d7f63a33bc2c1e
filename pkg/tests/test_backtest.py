import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from madl.backtest import (
    EquityCurve,
    arc,
    asd,
    buy_and_hold_positions,
    count_trades,
    equity_curve,
    information_ratios,
    max_drawdown,
    max_loss_duration,
    metrics_report,
    signals_from_forecasts,
)
from madl.losses import madl
from madl.market_data import ReturnSeries

# Published Table 2 rows: aRC, aSD, MD, MLD, IR*, IR**, IR***
TABLE2 = {
    "BTC B&H": (91.25, 87.37, 86.67, 3.24, 1.04, 1.100, 0.310),
    "BTC MADL/MADL": (109.94, 87.34, 75.04, 1.91, 1.26, 1.844, 1.062),
    "BTC MADL/MAE": (99.90, 87.36, 86.67, 3.24, 1.14, 1.318, 0.406),
    "BTC MAE/MAE": (44.26, 87.45, 94.18, 3.46, 0.51, 0.238, 0.030),
    "BTC MAE/MADL": (4.05, 87.51, 90.99, 4.83, 0.05, 0.002, 0.000),
    "USO B&H": (-10.59, 38.09, 98.19, 14.24, -0.28, -0.030, 0.000),
    "USO MADL/MADL": (5.25, 38.08, 62.73, 7.58, 0.14, 0.012, 0.000),
    "USO MADL/MAE": (-22.70, 38.07, 98.91, 15.42, -0.60, -0.137, -0.002),
    "USO MAE/MAE": (-17.02, 38.08, 96.88, 15.42, -0.45, -0.079, -0.001),
    "USO MAE/MADL": (4.19, 38.08, 84.39, 12.74, 0.11, 0.005, 0.000),
}


def curve_from_equity(equity, ppy=365):
    equity = np.asarray(equity, dtype=float)
    prev = np.concatenate([[1.0], equity[:-1]])
    strat = equity / prev - 1
    return EquityCurve(np.datetime64("2020-01-01") + np.arange(len(equity)), equity, strat,
                       np.ones(len(equity), dtype=int), ppy)


def random_curve(seed, n=300, scale=0.03):
    r = np.random.default_rng(seed).normal(0.0005, scale, n)
    return equity_curve(np.ones(n, dtype=int), r, periods_per_year=252)


class TestSignals:
    def test_carry(self):
        np.testing.assert_array_equal(signals_from_forecasts([0.5, -0.2, 0.0]), [1, -1, -1])

    def test_leading_zero(self):
        np.testing.assert_array_equal(signals_from_forecasts([0.0, 0.0, 0.3, 0.0]), [0, 0, 1, 1])

    def test_sign_oracle(self):
        f = np.random.default_rng(0).normal(size=1000)
        assert np.all(f != 0)
        np.testing.assert_array_equal(signals_from_forecasts(f), [1 if v > 0 else -1 for v in f])


class TestEquity:
    def test_hand_compounding(self):
        c = equity_curve([1, 1], [0.1, -0.05])
        np.testing.assert_allclose(c.equity, [1.1, 1.045], rtol=1e-15)

    def test_flat(self):
        c = equity_curve([0, 0, 0], [0.1, -0.3, 0.2])
        np.testing.assert_array_equal(c.equity, [1.0, 1.0, 1.0])

    def test_all_long_is_buy_and_hold(self):
        r = np.random.default_rng(1).normal(0, 0.02, 500)
        c = equity_curve(buy_and_hold_positions(500), r)
        expected = np.ones(500)
        acc = 1.0
        for i, v in enumerate(r):
            acc *= 1 + v
            expected[i] = acc
        np.testing.assert_allclose(c.equity, expected, rtol=1e-13)

    def test_costs_on_changes(self):
        c = equity_curve([1, 1, -1, -1, 0], [0.01, 0.01, 0.01, 0.01, 0.01], cost_bps=10)
        np.testing.assert_allclose(c.strategy_returns, [0.009, 0.01, -0.011, -0.01, -0.001])

    def test_from_return_series(self):
        rs = ReturnSeries.from_values([0.01, 0.02], periods_per_year=365)
        c = equity_curve([1, -1], rs)
        assert c.periods_per_year == 365 and c.dates[0] == rs.dates[0]

    def test_misaligned(self):
        with pytest.raises(ValueError, match="misaligned"):
            equity_curve([1, 1], [0.1])
        with pytest.raises(ValueError):
            equity_curve([2], [0.1])

    @given(st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=50), st.data())
    def test_flip_antisymmetry(self, r, data):
        pos = np.array(data.draw(st.lists(st.sampled_from([-1, 0, 1]), min_size=len(r), max_size=len(r))))
        a, b = equity_curve(pos, r), equity_curve(-pos, r)
        np.testing.assert_array_equal(a.strategy_returns, -b.strategy_returns)


class TestTrades:
    def test_constant_long(self):
        assert count_trades([1] * 100) == 2

    @pytest.mark.parametrize("v", [1, -1])
    def test_any_constant_position(self, v):
        assert count_trades([v] * 7) == 2

    def test_never_in_market(self):
        assert count_trades([0, 0, 0]) == 0
        assert count_trades([]) == 0

    @pytest.mark.parametrize("n", [1, 2, 5, 50])
    def test_alternating(self, n):
        pos = [1 if i % 2 == 0 else -1 for i in range(n)]
        transitions = sum(1 for a, b in zip([0] + pos, pos + [0]) if a != b)
        assert count_trades(pos) == transitions == n + 1


class TestArc:
    def test_closed_form(self):
        c = curve_from_equity(np.r_[np.ones(729), 1.21])
        assert arc(c) == pytest.approx(10.0, abs=1e-10)

    def test_flat(self):
        assert arc(curve_from_equity(np.ones(10))) == 0.0

    def test_log_space_oracle(self):
        c = random_curve(2)
        oracle = (math.exp(252 / len(c) * sum(math.log1p(v) for v in c.strategy_returns)) - 1) * 100
        assert arc(c) == pytest.approx(oracle, abs=1e-10)


class TestAsd:
    def test_constant(self):
        c = equity_curve([1] * 5, [0.01] * 5)
        assert asd(c) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form(self):
        c = equity_curve([1, 1], [0.01, -0.01], periods_per_year=252)
        assert asd(c) == pytest.approx(0.01 * math.sqrt(252) * 100, rel=1e-12)
        assert asd(c) == pytest.approx(15.87, abs=0.005)

    def test_two_pass_oracle(self):
        c = random_curve(3)
        x = c.strategy_returns
        mean = sum(x) / len(x)
        var = sum((v - mean) ** 2 for v in x) / len(x)
        assert asd(c) == pytest.approx(math.sqrt(var) * math.sqrt(252) * 100, abs=1e-10)

    def test_too_short(self):
        with pytest.raises(ValueError):
            asd(equity_curve([1], [0.1]))


def brute_force_md(eq):
    eq = np.r_[1.0, eq]
    return max((eq[i] - eq[j]) / eq[i] for i in range(len(eq)) for j in range(i, len(eq))) * 100


def brute_force_mld(eq, ppy):
    eq = np.r_[1.0, eq]
    n = len(eq)
    best = 0
    for p in range(n):
        if eq[p] < eq[:p + 1].max():
            continue  # not a running peak
        rec = next((r for r in range(p + 1, n) if eq[r] > eq[p]), None)
        end = rec if rec is not None else n - 1
        if any(eq[j] < eq[p] for j in range(p + 1, end + 1)):
            best = max(best, end - p)
    return best / ppy


class TestDrawdown:
    def test_monotone(self):
        c = curve_from_equity([1.01, 1.02, 1.5, 2.0])
        assert max_drawdown(c) == 0.0
        assert max_loss_duration(c) == 0.0

    def test_hand(self):
        c = curve_from_equity([1, 1.2, 0.9, 1.3])
        assert max_drawdown(c) == pytest.approx(25.0)
        assert max_loss_duration(c) == pytest.approx(2 / 365)

    def test_unrecovered_runs_to_end(self):
        c = curve_from_equity([1.1, 0.9, 0.95, 1.05], ppy=252)
        assert max_loss_duration(c) == pytest.approx(3 / 252)

    def test_first_period_loss_counts(self):
        c = curve_from_equity([0.8, 0.9])
        assert max_drawdown(c) == pytest.approx(20.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_brute_force(self, seed):
        c = random_curve(seed, n=120, scale=0.05)
        assert max_drawdown(c) == pytest.approx(brute_force_md(c.equity), abs=1e-10)
        assert max_loss_duration(c) == brute_force_mld(c.equity, 252)

    @given(st.lists(st.floats(-0.9, 1.0), min_size=1, max_size=60))
    def test_md_bounds_and_mld_oracle(self, r):
        c = equity_curve(np.ones(len(r), dtype=int), r)
        assert 0 <= max_drawdown(c) < 100
        assert max_loss_duration(c) == brute_force_mld(c.equity, 252)


class TestInformationRatios:
    def test_btc_bh(self):
        ir1, ir2, ir3 = information_ratios(91.25, 87.37, 86.67, 3.24)
        assert round(ir1, 2) == 1.04
        assert ir2 == pytest.approx(1.100, abs=0.0011)
        assert ir3 == pytest.approx(0.310, abs=0.0011)

    def test_uso_bh(self):
        ir1, ir2, _ = information_ratios(-10.59, 38.09, 98.19, 14.24)
        assert round(ir1, 2) == -0.28
        assert ir2 == pytest.approx(-0.030, abs=0.0011)

    def test_zero_return(self):
        assert information_ratios(0.0, 20.0, 10.0, 1.0) == (0.0, 0.0, 0.0)

    def test_absent(self):
        assert information_ratios(5.0, 0.0, 10.0, 1.0) == (None, None, None)
        assert information_ratios(5.0, 10.0, 0.0, 1.0)[1:] == (None, None)
        assert information_ratios(5.0, 10.0, 10.0, 0.0)[2] is None

    @pytest.mark.parametrize("row", sorted(TABLE2))
    def test_table2_rows(self, row):
        a, s, d, mld, *published = TABLE2[row]
        for got, want in zip(information_ratios(a, s, d, mld), published):
            assert abs(got - want) <= 0.011


class TestMetricsReport:
    def test_buy_and_hold(self):
        r = np.random.default_rng(9).normal(0.002, 0.04, 800)
        c = equity_curve(buy_and_hold_positions(800), r, periods_per_year=365)
        m = metrics_report(c)
        assert m.n_trades == 2 and m.n_obs == 800
        assert m.ir1 == pytest.approx((m.arc_pct / 100) / (m.asd_pct / 100))
        assert m.ir2 * m.md_pct / 100 == pytest.approx(m.ir1 * abs(m.arc_pct) / 100)
        assert m.ir3 * m.mld_years == pytest.approx(m.ir2 * abs(m.arc_pct) / 100)

    def test_flat(self):
        m = metrics_report(equity_curve([0] * 10, np.full(10, 0.01)))
        assert m.arc_pct == 0 and m.asd_pct == 0 and m.md_pct == 0
        assert (m.ir1, m.ir2, m.ir3) == (None, None, None)
        assert m.n_trades == 0

    def test_row_order(self):
        m = metrics_report(curve_from_equity([1.0, 1.1, 1.05]))
        assert list(m.row("x")) == ["model", "aRC", "aSD", "MD", "MLD", "IR*", "IR**", "IR***", "nObs", "nTrades"]


@pytest.mark.parametrize("seed", range(20))
def test_sum_of_strategy_returns_is_minus_n_madl(seed):
    rng = np.random.default_rng(seed)
    r, f = rng.normal(0, 0.02, 250), rng.normal(0, 0.02, 250)
    c = equity_curve(signals_from_forecasts(f), r)
    assert c.strategy_returns.sum() == pytest.approx(-len(r) * madl(r, f), rel=1e-12)
