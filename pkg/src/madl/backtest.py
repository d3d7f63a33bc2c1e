"""Long/Short positions, equity curves and the performance-metric suite.

Percent-valued metrics (ARC, ASD, MD) are reported in percent; MLD in years.
Drawdown-type metrics treat the starting capital of 1.0 as the first peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

METRIC_COLUMNS = ("model", "aRC", "aSD", "MD", "MLD", "IR*", "IR**", "IR***", "nObs", "nTrades")


@dataclass(frozen=True)
class EquityCurve:
    dates: np.ndarray
    equity: np.ndarray
    strategy_returns: np.ndarray
    positions: np.ndarray
    periods_per_year: int

    def __len__(self) -> int:
        return len(self.equity)

    def with_base(self) -> np.ndarray:
        return np.concatenate([[1.0], self.equity])


@dataclass(frozen=True)
class MetricsReport:
    arc_pct: float
    asd_pct: float
    md_pct: float
    mld_years: float
    ir1: float | None
    ir2: float | None
    ir3: float | None
    n_obs: int
    n_trades: int

    def row(self, model: str) -> dict:
        return dict(zip(METRIC_COLUMNS, (model, self.arc_pct, self.asd_pct, self.md_pct, self.mld_years,
                                         self.ir1, self.ir2, self.ir3, self.n_obs, self.n_trades)))


def signals_from_forecasts(forecasts) -> np.ndarray:
    """+1 for a positive forecast, -1 for negative; a zero forecast keeps the previous position."""
    f = np.asarray(forecasts, dtype=np.float64).ravel()
    pos = np.sign(f).astype(np.int64)
    prev = 0
    for i in range(len(pos)):
        if pos[i] == 0:
            pos[i] = prev
        prev = pos[i]
    return pos


def buy_and_hold_positions(n: int) -> np.ndarray:
    return np.ones(n, dtype=np.int64)


def _position_changes(positions: np.ndarray) -> np.ndarray:
    return np.diff(np.concatenate([[0], positions])) != 0


def equity_curve(positions, realized, cost_bps: float = 0.0, dates=None, periods_per_year: int | None = None) -> EquityCurve:
    """Compound ``position_t * R_t`` from 1.0, charging ``cost_bps`` on every position change.

    ``realized`` may be a :class:`~madl.market_data.ReturnSeries` (dates and
    annualization are taken from it) or a bare array.
    """
    if hasattr(realized, "returns"):
        dates = realized.dates if dates is None else dates
        periods_per_year = realized.periods_per_year if periods_per_year is None else periods_per_year
        realized = realized.returns
    r = np.asarray(realized, dtype=np.float64).ravel()
    pos = np.asarray(positions).ravel().astype(np.int64)
    if pos.shape != r.shape:
        raise ValueError(f"positions ({pos.size}) and returns ({r.size}) are misaligned")
    if not np.isin(pos, (-1, 0, 1)).all():
        raise ValueError("positions must be in {-1, 0, 1}")
    if cost_bps < 0:
        raise ValueError("cost_bps must be nonnegative")
    strat = pos * r
    if cost_bps:
        strat = strat - (cost_bps / 1e4) * _position_changes(pos)
    equity = np.cumprod(1.0 + strat)
    if dates is None:
        dates = np.datetime64("2000-01-01", "D") + np.arange(len(r))
    return EquityCurve(np.asarray(dates), equity, strat, pos, int(periods_per_year or 252))


def count_trades(positions) -> int:
    """Position changes, with an implicit flat position before the start and after the end."""
    pos = np.asarray(positions).ravel()
    if pos.size == 0:
        return 0
    padded = np.concatenate([[0], pos, [0]])
    return int(np.count_nonzero(np.diff(padded)))


def arc(curve: EquityCurve) -> float:
    n = len(curve)
    if n == 0:
        raise ValueError("empty equity curve")
    final = curve.equity[-1]
    if final <= 0:
        return -100.0
    return (final ** (curve.periods_per_year / n) - 1.0) * 100.0


def asd(curve: EquityCurve) -> float:
    if len(curve) < 2:
        raise ValueError("need at least two periods for ASD")
    return float(np.std(curve.strategy_returns) * math.sqrt(curve.periods_per_year) * 100.0)


def max_drawdown(curve: EquityCurve) -> float:
    eq = curve.with_base()
    peak = np.maximum.accumulate(eq)
    return float(np.max((peak - eq) / peak) * 100.0)


def max_loss_duration(curve: EquityCurve) -> float:
    """Longest stretch, in years, from a peak to the first period strictly above it.

    Only peaks that are followed by a period below them count; a drawdown
    that never recovers runs through the last period.
    """
    eq = curve.with_base()
    longest = 0
    peak_val, peak_idx, under = eq[0], 0, False
    for i in range(1, len(eq)):
        if eq[i] > peak_val:
            if under:
                longest = max(longest, i - peak_idx)
            peak_val, peak_idx, under = eq[i], i, False
        elif eq[i] < peak_val:
            under = True
    if under:
        longest = max(longest, len(eq) - 1 - peak_idx)
    return longest / curve.periods_per_year


def information_ratios(arc_pct: float, asd_pct: float, md_pct: float, mld_years: float):
    """IR* = A/S, IR** = IR*·|A|/D, IR*** = IR**·|A|/MLD (A, S, D as fractions).

    A ratio whose denominator is zero (or whose predecessor is absent) is
    returned as ``None``.
    """
    a, s, d = arc_pct / 100.0, asd_pct / 100.0, md_pct / 100.0
    ir1 = a / s if s > 0 else None
    ir2 = ir1 * abs(a) / d if ir1 is not None and d > 0 else None
    ir3 = ir2 * abs(a) / mld_years if ir2 is not None and mld_years > 0 else None
    return ir1, ir2, ir3


def metrics_report(curve: EquityCurve) -> MetricsReport:
    a, s = arc(curve), asd(curve)
    d, mld = max_drawdown(curve), max_loss_duration(curve)
    ir1, ir2, ir3 = information_ratios(a, s, d, mld)
    ir1, ir2, ir3 = (None if v is None else float(v) for v in (ir1, ir2, ir3))
    return MetricsReport(float(a), s, d, mld, ir1, ir2, ir3, len(curve), count_trades(curve.positions))


def directional_accuracy(realized, forecasts) -> float:
    r = np.asarray(realized, dtype=np.float64)
    f = np.asarray(forecasts, dtype=np.float64)
    return float(np.mean(np.sign(r) == np.sign(f)))
