"""Command-line entry point: ``madl {run,matrix,tune,surface,report}``.

On failure a single JSON line ``{"error": <type>, "message": <text>}`` goes to
stderr and the exit code is 1 (2 for usage errors, as argparse does).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .experiment import (
    ExperimentConfig,
    _prepare,
    combine_results,
    emit_loss_surface,
    load_result,
    run_experiment,
    run_loss_matrix,
    tune,
    write_reports,
)
from .presets import PRESETS

logger = logging.getLogger("madl")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.preset:
        changes["preset"] = args.preset
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out:
        changes["out_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.out_dir
    if not out:
        raise ValueError("no output directory: pass --out or set out_dir in the config")
    return Path(out)


def cmd_run(args) -> None:
    cfg = _load_config(args)
    files = write_reports(run_experiment(cfg), _out_dir(args, cfg))
    print(files["metrics.csv"].read_text(), end="")


def cmd_matrix(args) -> None:
    cfg = _load_config(args)
    files = write_reports(combine_results(run_loss_matrix(cfg)), _out_dir(args, cfg))
    print(files["metrics.csv"].read_text(), end="")


def cmd_tune(args) -> None:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    cfg, returns, plan, _ = _prepare(cfg, None)
    summary = tune(cfg, returns, plan, cfg.tuning_loss)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "tuning.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["candidate", "config_hash", "score", "selected"])
        for i, (c, s) in enumerate(zip(summary.candidates, summary.scores)):
            w.writerow([i, c.digest(), "" if s is None else repr(s), i == summary.selected_index])
    (out / "selected_config.json").write_text(json.dumps(summary.selected.to_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps({"tuning_loss": summary.tuning_loss, "selected_index": summary.selected_index,
                      "selected": summary.selected.to_dict()}))


def cmd_surface(args) -> None:
    out = Path(args.out or ".")
    path = out / f"surface_{args.loss.lower()}.csv"
    emit_loss_surface(tuple(args.realized), tuple(args.forecast), args.steps, args.loss, path)
    print(path)


def cmd_report(args) -> None:
    if not args.out:
        raise ValueError("report needs --out")
    files = write_reports(load_result(args.result), args.out)
    print(files["metrics.csv"].read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="madl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config JSON")
        p.add_argument("--out", help="output directory (overrides config out_dir)")
        p.add_argument("--seed", type=int, help="random seed (overrides config)")
        p.add_argument("--preset", choices=sorted(PRESETS), help="hyperparameter preset (overrides config)")

    common(sub.add_parser("run", help="one tuning/training loss combination"))
    common(sub.add_parser("matrix", help="all four loss combinations"))
    common(sub.add_parser("tune", help="grid search on the first in-sample window only"))

    p = sub.add_parser("surface", help="single-observation loss grid")
    p.add_argument("--loss", default="MADL", choices=["MADL", "MAE"])
    p.add_argument("--realized", type=float, nargs=2, default=(-0.05, 0.05), metavar=("MIN", "MAX"))
    p.add_argument("--forecast", type=float, nargs=2, default=(-0.05, 0.05), metavar=("MIN", "MAX"))
    p.add_argument("--steps", type=int, default=101)
    p.add_argument("--out", help="output directory (default: current directory)")

    p = sub.add_parser("report", help="re-emit report files from a stored result.json")
    p.add_argument("--result", required=True, help="result.json written by run/matrix")
    p.add_argument("--out", required=True)
    return parser


COMMANDS = {"run": cmd_run, "matrix": cmd_matrix, "tune": cmd_tune, "surface": cmd_surface, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parseable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
