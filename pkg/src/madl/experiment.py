"""Walk-forward experiment pipeline, loss matrix, loss surfaces and report files."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import (
    METRIC_COLUMNS,
    EquityCurve,
    MetricsReport,
    buy_and_hold_positions,
    equity_curve,
    metrics_report,
    signals_from_forecasts,
)
from .forecaster import NetworkConfig, grid_search, predict, train
from .losses import ForecastSeries, Loss, madl_terms, mae_terms
from .market_data import (
    DataError,
    ReturnSeries,
    WalkForwardPlan,
    fit_standardizer,
    load_price_csv,
    make_sequences,
    plan_walk_forward,
    to_simple_returns,
)
from .presets import get_preset
from .stats import BENCHMARK_ON_STRATEGY, REGRESSION_COLUMNS, RegressionResult, strategy_regressions

logger = logging.getLogger(__name__)

BENCHMARK = "B&H"
LOSS_MATRIX = ((Loss.MADL, Loss.MADL), (Loss.MADL, Loss.MAE), (Loss.MAE, Loss.MAE), (Loss.MAE, Loss.MADL))


class ExperimentError(RuntimeError):
    """A pipeline stage failed; the message names the stage and window."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Experiment definition, loadable from JSON.

    Fields left as ``None`` are filled from the preset by :meth:`resolved`.
    ``network`` overrides apply to every candidate network; ``grid`` is a
    list of per-candidate overrides (``None`` means the preset's single
    network for the tuning loss).
    """

    data_path: str | None = None
    date_column: str = "date"
    close_column: str = "close"
    asset_id: str | None = None
    preset: str = "desk"
    periods_per_year: int | None = None
    train_len: int | None = None
    test_len: int | None = None
    sequence_length: int | None = None
    tuning_loss: str = "MADL"
    training_loss: str = "MADL"
    network: dict = field(default_factory=dict)
    grid: list | None = None
    cost_bps: float = 0.0
    seed: int = 0
    out_dir: str | None = None
    regression_direction: str = BENCHMARK_ON_STRATEGY

    def __post_init__(self):
        object.__setattr__(self, "tuning_loss", Loss.parse(self.tuning_loss).value)
        object.__setattr__(self, "training_loss", Loss.parse(self.training_loss).value)
        get_preset(self.preset)
        if self.cost_bps < 0:
            raise ValueError("cost_bps must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")
        if self.grid is not None and len(self.grid) == 0:
            raise ValueError("grid must contain at least one candidate")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def resolved(self) -> "ExperimentConfig":
        p = get_preset(self.preset)
        cfg = self.replace(
            periods_per_year=self.periods_per_year or p.periods_per_year,
            train_len=self.train_len or p.train_len,
            test_len=self.test_len or p.test_len,
            sequence_length=self.sequence_length or p.sequence_length,
        )
        if cfg.train_len <= cfg.sequence_length + 1:
            raise ValueError(f"train_len ({cfg.train_len}) must exceed sequence_length + 1 ({cfg.sequence_length + 1})")
        return cfg

    def candidates(self, tuning_loss) -> list[NetworkConfig]:
        """Grid of networks for one tuning loss; every candidate is trained under that loss."""
        cfg = self.resolved()
        tuning_loss = Loss.parse(tuning_loss)
        base = get_preset(cfg.preset).network(tuning_loss).replace(sequence_length=cfg.sequence_length)
        base = NetworkConfig.from_dict({**base.to_dict(), **cfg.network})
        entries = cfg.grid if cfg.grid is not None else [{}]
        return [NetworkConfig.from_dict({**base.to_dict(), **entry, "loss_choice": tuning_loss, "seed": cfg.seed})
                for entry in entries]


@dataclass
class TuningSummary:
    tuning_loss: str
    selected: NetworkConfig
    selected_index: int
    candidates: list[NetworkConfig]
    scores: list[float | None]


@dataclass
class StrategyOutcome:
    curve: EquityCurve
    metrics: MetricsReport
    forecasts: ForecastSeries | None = None
    tuning: TuningSummary | None = None
    windows: list[dict] = field(default_factory=list)


@dataclass
class ExperimentResult:
    asset_id: str
    plan: WalkForwardPlan
    strategies: dict[str, StrategyOutcome]
    regressions: dict[str, RegressionResult]
    provenance: dict

    @property
    def benchmark(self) -> StrategyOutcome:
        return self.strategies[BENCHMARK]


def strategy_name(tuning_loss, training_loss) -> str:
    return f"{Loss.parse(tuning_loss).value}/{Loss.parse(training_loss).value}"


def load_returns(config: ExperimentConfig) -> ReturnSeries:
    cfg = config.resolved()
    if cfg.data_path is None:
        raise DataError("config has no data_path")
    prices = load_price_csv(cfg.data_path, cfg.date_column, cfg.close_column, cfg.asset_id)
    return to_simple_returns(prices, cfg.periods_per_year)


def _window_seed(seed: int, window: int) -> int:
    return int(np.random.SeedSequence([seed, window]).generate_state(1)[0])


def tune(config: ExperimentConfig, returns: ReturnSeries, plan: WalkForwardPlan, tuning_loss=None) -> TuningSummary:
    """Grid search on the first window's training range.

    The last ``test_len`` points of that range are the validation targets;
    the standardizer is fitted on the points before them.  A single-candidate
    grid is passed through untrained.
    """
    cfg = config.resolved()
    tuning_loss = Loss.parse(tuning_loss or cfg.tuning_loss)
    grid = cfg.candidates(tuning_loss)
    if len(grid) == 1:
        return TuningSummary(tuning_loss.value, grid[0], 0, grid, [None])
    w = plan.windows[0]
    split = w.train_end - cfg.test_len
    seq = max(c.sequence_length for c in grid)
    if split - w.train_start <= seq + 1:
        raise ExperimentError(f"tuning: train_len {cfg.train_len} leaves no sub-training data after a "
                              f"{cfg.test_len}-point validation split")
    try:
        s = fit_standardizer(returns, w.train_start, split)
        by_len = {}
        for c in grid:
            L = c.sequence_length
            if L not in by_len:
                by_len[L] = (make_sequences(returns, L, s, w.train_start + L, split),
                             make_sequences(returns, L, s, split, w.train_end))
        if len(by_len) == 1:
            scores = grid_search(grid, *by_len[grid[0].sequence_length], tuning_loss).scores
        else:
            # Candidates differ in sequence length, so each sees its own sequence sets.
            scores = [grid_search([c], *by_len[c.sequence_length], tuning_loss).scores[0] for c in grid]
    except (DataError, ValueError) as exc:
        raise ExperimentError(f"tuning on window 0: {exc}") from exc
    best = int(np.argmin(scores))
    return TuningSummary(tuning_loss.value, grid[best], best, grid, scores)


def forecast_walk_forward(returns: ReturnSeries, plan: WalkForwardPlan, network: NetworkConfig,
                          seed: int = 0) -> tuple[ForecastSeries, list[dict]]:
    """Train a fresh model per window and forecast every day of its test range."""
    L = network.sequence_length
    forecasts, summaries = [], []
    for i, w in enumerate(plan):
        try:
            s = fit_standardizer(returns, w.train_start, w.train_end)
            train_set = make_sequences(returns, L, s, w.train_start + L, w.train_end)
            test_set = make_sequences(returns, L, s, w.test_start, w.test_end)
            cfg = network.replace(seed=_window_seed(seed, i))
            params, trace = train(cfg, train_set)
            forecasts.append(predict(params, test_set))
        except (DataError, ValueError) as exc:
            raise ExperimentError(f"window {i} {w.as_tuple()}: {exc}") from exc
        summaries.append({
            "window": i, "range": list(w.as_tuple()), "seed": cfg.seed, "config_hash": cfg.digest(),
            "standardizer": [s.mean, s.std], "train_loss_initial": trace.train_loss[0],
            "train_loss_final": trace.train_loss[-1],
        })
        logger.info("window %d/%d trained: %s %.6g -> %.6g", i + 1, len(plan), cfg.loss_choice.value,
                    trace.train_loss[0], trace.train_loss[-1])
    idx = np.arange(plan.oos_start, plan.oos_end)
    fs = ForecastSeries(returns.dates[idx], np.concatenate(forecasts), returns.returns[idx])
    return fs, summaries


def _outcome(positions, oos: ReturnSeries, cost_bps: float, **extra) -> StrategyOutcome:
    curve = equity_curve(positions, oos, cost_bps)
    return StrategyOutcome(curve, metrics_report(curve), **extra)


def _benchmark(oos: ReturnSeries, cost_bps: float) -> StrategyOutcome:
    return _outcome(buy_and_hold_positions(len(oos)), oos, cost_bps)


def _regressions(strategies: dict[str, StrategyOutcome], direction: str) -> dict[str, RegressionResult]:
    bench = strategies[BENCHMARK].curve.strategy_returns
    others = {k: v.curve.strategy_returns for k, v in strategies.items() if k != BENCHMARK}
    return strategy_regressions(bench, others, direction)


def _provenance(cfg: ExperimentConfig) -> dict:
    return {
        "config": cfg.to_dict(), "config_hash": cfg.digest(), "seed": cfg.seed,
        "versions": {"madl": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _prepare(config: ExperimentConfig, returns: ReturnSeries | None):
    cfg = config.resolved()
    if returns is None:
        returns = load_returns(cfg)
    plan = plan_walk_forward(len(returns), cfg.train_len, cfg.test_len)
    oos = returns.slice(plan.oos_start, plan.oos_end)
    return cfg, returns, plan, oos


def _asset(cfg: ExperimentConfig) -> str:
    if cfg.asset_id:
        return cfg.asset_id
    return Path(cfg.data_path).stem if cfg.data_path else "series"


def _run_strategy(cfg, returns, plan, oos, tuning: TuningSummary, training_loss) -> StrategyOutcome:
    network = tuning.selected.replace(loss_choice=Loss.parse(training_loss))
    fs, windows = forecast_walk_forward(returns, plan, network, cfg.seed)
    return _outcome(signals_from_forecasts(fs.forecasts), oos, cfg.cost_bps,
                    forecasts=fs, tuning=tuning, windows=windows)


def run_experiment(config: ExperimentConfig, returns: ReturnSeries | None = None) -> ExperimentResult:
    """Tune, train per window, forecast, backtest and regress one loss combination.

    ``returns`` bypasses file loading when given.
    """
    cfg, returns, plan, oos = _prepare(config, returns)
    tuning = tune(cfg, returns, plan, cfg.tuning_loss)
    name = strategy_name(cfg.tuning_loss, cfg.training_loss)
    strategies = {BENCHMARK: _benchmark(oos, cfg.cost_bps),
                  name: _run_strategy(cfg, returns, plan, oos, tuning, cfg.training_loss)}
    return ExperimentResult(_asset(cfg), plan, strategies, _regressions(strategies, cfg.regression_direction),
                            _provenance(cfg))


def run_loss_matrix(config: ExperimentConfig, returns: ReturnSeries | None = None) -> dict[str, ExperimentResult]:
    """All four tuning/training loss combinations over one dataset and plan.

    Tuning runs once per tuning loss; both training losses of that row reuse
    the selected network.
    """
    cfg, returns, plan, oos = _prepare(config, returns)
    tunings = {loss: tune(cfg, returns, plan, loss) for loss in (Loss.MADL, Loss.MAE)}
    bench = _benchmark(oos, cfg.cost_bps)
    results = {}
    for tuning_loss, training_loss in LOSS_MATRIX:
        name = strategy_name(tuning_loss, training_loss)
        sub = cfg.replace(tuning_loss=tuning_loss.value, training_loss=training_loss.value)
        strategies = {BENCHMARK: bench,
                      name: _run_strategy(sub, returns, plan, oos, tunings[tuning_loss], training_loss)}
        results[name] = ExperimentResult(_asset(sub), plan, strategies,
                                         _regressions(strategies, sub.regression_direction), _provenance(sub))
    return results


def combine_results(results: dict[str, ExperimentResult]) -> ExperimentResult:
    """Merge per-combination results that share a plan into one report (B&H first)."""
    results = list(results.values())
    first = results[0]
    strategies = {BENCHMARK: first.benchmark}
    regressions = {}
    for res in results:
        if res.plan != first.plan:
            raise ValueError("cannot combine results with different walk-forward plans")
        strategies.update({k: v for k, v in res.strategies.items() if k != BENCHMARK})
        regressions.update(res.regressions)
    provenance = dict(first.provenance)
    provenance["config"] = dict(provenance["config"], tuning_loss=None, training_loss=None)
    provenance["config_hash"] = hashlib.sha256(json.dumps(provenance["config"], sort_keys=True).encode()).hexdigest()
    provenance["combinations"] = list(k for k in strategies if k != BENCHMARK)
    return ExperimentResult(first.asset_id, first.plan, strategies, regressions, provenance)


# Loss surface -----------------------------------------------------------------

@dataclass
class LossSurface:
    realized: np.ndarray
    forecast: np.ndarray
    values: np.ndarray  # values[i, j] is the loss at (realized[i], forecast[j])
    loss: str


def emit_loss_surface(realized_range, forecast_range, grid_steps, loss="MADL", path=None) -> LossSurface:
    """Single-observation loss over an evenly spaced (realized, forecast) grid.

    ``grid_steps`` is a point count, or a pair of counts for the two axes.
    With ``path`` the grid is also written as long-format CSV.
    """
    loss = Loss.parse(loss)
    n_r, n_f = (grid_steps, grid_steps) if np.isscalar(grid_steps) else grid_steps
    if n_r < 1 or n_f < 1:
        raise ValueError("grid step counts must be positive")
    for lo, hi in (realized_range, forecast_range):
        if not hi >= lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
    r = np.linspace(realized_range[0], realized_range[1], int(n_r))
    f = np.linspace(forecast_range[0], forecast_range[1], int(n_f))
    rr, ff = np.meshgrid(r, f, indexing="ij")
    terms = madl_terms if loss is Loss.MADL else mae_terms
    values = terms(rr.ravel(), ff.ravel()).reshape(rr.shape)
    surface = LossSurface(r, f, values, loss.value)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["realized", "forecast", loss.value])
            for i in range(len(r)):
                for j in range(len(f)):
                    w.writerow([_fmt(r[i]), _fmt(f[j]), _fmt(values[i, j])])
    return surface


# Reports ----------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_reports(result: ExperimentResult, out_dir) -> dict[str, Path]:
    """Write metrics.csv, equity.csv, regressions.csv, run_manifest.json and result.json."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    files = {name: out / name for name in ("metrics.csv", "equity.csv", "regressions.csv",
                                            "run_manifest.json", "result.json")}

    _write_csv(files["metrics.csv"], METRIC_COLUMNS,
               ([s.metrics.row(name)[c] for c in METRIC_COLUMNS] for name, s in result.strategies.items()))

    names = list(result.strategies)
    dates = next(iter(result.strategies.values())).curve.dates if names else np.array([], dtype="datetime64[D]")
    _write_csv(files["equity.csv"], ["date"] + names,
               ([str(d)] + [result.strategies[n].curve.equity[i] for n in names] for i, d in enumerate(dates)))

    _write_csv(files["regressions.csv"], REGRESSION_COLUMNS,
               ([r.row(name)[c] for c in REGRESSION_COLUMNS] for name, r in result.regressions.items()))

    manifest = dict(result.provenance)
    manifest["asset_id"] = result.asset_id
    manifest["strategies"] = names
    manifest["plan"] = [list(w.as_tuple()) for w in result.plan] if result.plan is not None else []
    manifest["tuning"] = {name: _tuning_dict(s.tuning) for name, s in result.strategies.items() if s.tuning}
    manifest["windows"] = {name: s.windows for name, s in result.strategies.items() if s.windows}
    _write_json(files["run_manifest.json"], manifest)
    _write_json(files["result.json"], result_to_dict(result))
    return files


def _write_json(path: Path, payload) -> None:
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _tuning_dict(t: TuningSummary) -> dict:
    return {"tuning_loss": t.tuning_loss, "selected_index": t.selected_index, "selected": t.selected.to_dict(),
            "scores": t.scores, "candidates": [c.to_dict() for c in t.candidates]}


def result_to_dict(result: ExperimentResult) -> dict:
    """Serializable snapshot sufficient to re-emit every report file."""
    strategies = []
    for name, s in result.strategies.items():
        c = s.curve
        entry = {
            "name": name, "dates": [str(d) for d in c.dates], "strategy_returns": c.strategy_returns.tolist(),
            "positions": c.positions.tolist(), "periods_per_year": c.periods_per_year,
            "windows": s.windows, "tuning": _tuning_dict(s.tuning) if s.tuning else None,
        }
        if s.forecasts is not None:
            entry["forecasts"] = s.forecasts.forecasts.tolist()
            entry["realized"] = s.forecasts.realized.tolist()
        strategies.append(entry)
    return {
        "format_version": 1, "asset_id": result.asset_id, "provenance": result.provenance,
        "plan": [list(w.as_tuple()) for w in result.plan] if result.plan is not None else [],
        "strategies": strategies,
    }


def result_from_dict(d: dict) -> ExperimentResult:
    from .market_data import Window

    if d.get("format_version") != 1:
        raise ValueError(f"unsupported result format {d.get('format_version')}")
    strategies = {}
    for e in d["strategies"]:
        name = e["name"]
        dates = np.array(e["dates"], dtype="datetime64[D]")
        strat = np.array(e["strategy_returns"], dtype=np.float64)
        pos = np.array(e["positions"], dtype=np.int64)
        curve = EquityCurve(dates, np.cumprod(1.0 + strat), strat, pos, int(e["periods_per_year"]))
        fs = None
        if "forecasts" in e:
            fs = ForecastSeries(dates, np.array(e["forecasts"]), np.array(e["realized"]))
        tuning = None
        if e.get("tuning"):
            t = e["tuning"]
            tuning = TuningSummary(t["tuning_loss"], NetworkConfig.from_dict(t["selected"]), t["selected_index"],
                                   [NetworkConfig.from_dict(c) for c in t["candidates"]], t["scores"])
        strategies[name] = StrategyOutcome(curve, metrics_report(curve), fs, tuning, e.get("windows", []))
    plan = WalkForwardPlan(tuple(Window(*w) for w in d["plan"]))
    direction = d["provenance"].get("config", {}).get("regression_direction", BENCHMARK_ON_STRATEGY)
    regressions = _regressions(strategies, direction) if BENCHMARK in strategies else {}
    return ExperimentResult(d["asset_id"], plan, strategies, regressions, d["provenance"])


def load_result(path) -> ExperimentResult:
    with open(path, encoding="utf-8") as fh:
        return result_from_dict(json.load(fh))


def read_equity_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = list(zip(*reader)) or [()] * len(header)
    out = {"date": np.array(cols[0], dtype="datetime64[D]")}
    for name, col in zip(header[1:], cols[1:]):
        out[name] = np.array([float(v) for v in col])
    return out
