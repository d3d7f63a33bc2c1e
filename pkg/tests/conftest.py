import json

import numpy as np
import pytest

from madl.market_data import ReturnSeries

ACCEPTANCE_FILE = "test_acceptance.py"
_acceptance = {}


def square_wave_returns(n=1000, noise=0.005, seed=0, period=20, periods_per_year=252):
    """r_t = 0.01 * sign(sin(2*pi*t/period)) + N(0, noise)."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    r = 0.01 * np.sign(np.sin(2 * np.pi * t / period)) + rng.normal(0, noise, n)
    return ReturnSeries.from_values(r, start="2010-01-01", periods_per_year=periods_per_year)


def write_price_csv(path, returns: ReturnSeries, first_price=100.0):
    prices = first_price * np.concatenate([[1.0], np.cumprod(1 + returns.returns)])
    dates = np.concatenate([[returns.dates[0] - 1], returns.dates])
    path.write_text("date,close\n" + "".join(f"{d},{float(p)!r}\n" for d, p in zip(dates, prices)))
    return path


@pytest.fixture
def price_file(tmp_path):
    return write_price_csv(tmp_path / "syn.csv", square_wave_returns(400, seed=1))


@pytest.fixture
def config_file(tmp_path, price_file):
    cfg = {"data_path": str(price_file), "train_len": 200, "test_len": 100,
           "network": {"epochs": 20}, "seed": 3}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        _acceptance[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in _acceptance.items():
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
