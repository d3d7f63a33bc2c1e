"""Price ingestion, simple returns, standardization, sequences and walk-forward plans."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or unusable market data."""


@dataclass(frozen=True)
class PriceSeries:
    dates: np.ndarray  # datetime64[D]
    prices: np.ndarray
    asset_id: str = ""

    def __post_init__(self):
        if len(self.dates) != len(self.prices):
            raise DataError("dates and prices differ in length")
        if len(self.dates) > 1 and not np.all(np.diff(self.dates).astype(np.int64) > 0):
            raise DataError("dates must be strictly increasing")
        if np.any(~(self.prices > 0)):
            raise DataError("prices must be positive")

    def __len__(self) -> int:
        return len(self.prices)


@dataclass(frozen=True)
class ReturnSeries:
    dates: np.ndarray  # datetime64[D]
    returns: np.ndarray
    periods_per_year: int = 252

    def __post_init__(self):
        if len(self.dates) != len(self.returns):
            raise DataError("dates and returns differ in length")
        if self.periods_per_year <= 0:
            raise DataError("periods_per_year must be positive")

    def __len__(self) -> int:
        return len(self.returns)

    def slice(self, start: int, stop: int) -> "ReturnSeries":
        return ReturnSeries(self.dates[start:stop], self.returns[start:stop], self.periods_per_year)

    @classmethod
    def from_values(cls, returns, start="2000-01-01", periods_per_year: int = 252) -> "ReturnSeries":
        """Wrap a bare array of returns with consecutive daily dates."""
        returns = np.asarray(returns, dtype=np.float64)
        dates = np.datetime64(start, "D") + np.arange(len(returns))
        return cls(dates, returns, periods_per_year)


@dataclass(frozen=True)
class Standardizer:
    mean: float
    std: float

    @property
    def degenerate(self) -> bool:
        return not self.std > 0

    def apply(self, values):
        if self.degenerate:
            raise DataError("degenerate standardizer (zero standard deviation)")
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class SequenceSet:
    inputs: np.ndarray  # (num_sequences, sequence_length), standardized
    targets: np.ndarray  # raw next-period returns
    target_dates: np.ndarray
    target_index: np.ndarray  # position of each target in the source series

    def __len__(self) -> int:
        return len(self.targets)

    def subset(self, idx) -> "SequenceSet":
        return SequenceSet(self.inputs[idx], self.targets[idx], self.target_dates[idx], self.target_index[idx])


@dataclass(frozen=True)
class Window:
    train_start: int
    train_end: int
    test_start: int
    test_end: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.train_start, self.train_end, self.test_start, self.test_end)


@dataclass(frozen=True)
class WalkForwardPlan:
    windows: tuple[Window, ...]

    def __len__(self) -> int:
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    @property
    def oos_start(self) -> int:
        return self.windows[0].test_start

    @property
    def oos_end(self) -> int:
        return self.windows[-1].test_end


def load_price_csv(path, date_column: str = "date", close_column: str = "close",
                   asset_id: str | None = None) -> PriceSeries:
    """Read a ``date,close`` CSV into a sorted :class:`PriceSeries`.

    Rows may appear in any order; duplicate dates, non-positive prices and
    unparseable rows are rejected with the offending line number.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"price file not found: {path}")
    rows: list[tuple[date, float, int]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (date_column, close_column):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r} (found {header})")
        for row in reader:
            line = reader.line_num
            try:
                day = date.fromisoformat(row[date_column].strip())
                price = float(row[close_column])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line}: unparseable row ({exc})") from None
            if not price > 0:
                raise DataError(f"{path}:{line}: non-positive price {price}")
            rows.append((day, price, line))
    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if prev[0] == cur[0]:
            raise DataError(f"{path}:{cur[2]}: duplicate date {cur[0].isoformat()}")
    dates = np.array([r[0] for r in rows], dtype="datetime64[D]")
    prices = np.array([r[1] for r in rows], dtype=np.float64)
    return PriceSeries(dates, prices, asset_id if asset_id is not None else path.stem)


def to_simple_returns(p: PriceSeries, periods_per_year: int) -> ReturnSeries:
    if len(p) < 2:
        raise DataError("need at least two prices to form a return")
    returns = p.prices[1:] / p.prices[:-1] - 1.0
    return ReturnSeries(p.dates[1:], returns, periods_per_year)


def fit_standardizer(r: ReturnSeries | np.ndarray, start: int = 0, stop: int | None = None) -> Standardizer:
    """Mean and population (divide-by-N) std over ``r[start:stop]`` only."""
    values = r.returns if isinstance(r, ReturnSeries) else np.asarray(r, dtype=np.float64)
    stop = len(values) if stop is None else stop
    if not (0 <= start < stop <= len(values)):
        raise DataError(f"window [{start}, {stop}) out of bounds for length {len(values)}")
    if stop - start < 2:
        raise DataError("standardizer window needs at least two values")
    window = values[start:stop]
    if np.ptp(window) == 0:
        return Standardizer(float(window[0]), 0.0)
    return Standardizer(float(np.mean(window)), float(np.std(window)))


def make_sequences(r: ReturnSeries, sequence_length: int, s: Standardizer,
                   target_start: int | None = None, target_stop: int | None = None) -> SequenceSet:
    """Sliding windows of standardized returns, each paired with the raw next return.

    By default every admissible target is used (``len(r) - sequence_length``
    sequences).  ``target_start``/``target_stop`` restrict the targets to a
    half-open index range; inputs may then reach back before ``target_start``.
    """
    n = len(r)
    if sequence_length < 1:
        raise DataError("sequence_length must be positive")
    if n <= sequence_length:
        raise DataError(f"series of length {n} too short for sequence_length {sequence_length}")
    if s.degenerate:
        raise DataError("degenerate standardizer (zero standard deviation)")
    lo = sequence_length if target_start is None else target_start
    hi = n if target_stop is None else target_stop
    if lo < sequence_length or hi > n or lo >= hi:
        raise DataError(f"target range [{lo}, {hi}) invalid for length {n}, sequence_length {sequence_length}")
    z = s.apply(r.returns)
    target_index = np.arange(lo, hi)
    cols = np.arange(-sequence_length, 0)
    inputs = z[target_index[:, None] + cols[None, :]]
    return SequenceSet(inputs, r.returns[target_index].copy(), r.dates[target_index], target_index)


def plan_walk_forward(n: int, train_len: int, test_len: int) -> WalkForwardPlan:
    """Rolling windows stepping by ``test_len``; the last test range is truncated at ``n``."""
    if train_len < 1 or test_len < 1:
        raise DataError("train_len and test_len must be positive")
    if n <= train_len:
        raise DataError(f"n={n} must exceed train_len={train_len}")
    windows = []
    test_start = train_len
    while test_start < n:
        test_end = min(test_start + test_len, n)
        windows.append(Window(test_start - train_len, test_start, test_start, test_end))
        test_start = test_end
    return WalkForwardPlan(tuple(windows))


def prices_from_returns(first_price: float, returns: Sequence[float]) -> np.ndarray:
    return first_price * np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(returns, dtype=np.float64))])
