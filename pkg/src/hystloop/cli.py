"""
Command-line front end.

    hystloop simulate --config exp.ini --out results/ [--override controller.Kp=2.5 ...]
    hystloop tune     --config exp.ini --out results/
    hystloop metrics  results/exp_traces.csv [--ff-theoretical sine] [--tail 3000] [--json]

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, Experiment, load_experiment
from .errors import DegenerateSignalError, DivergenceError, HystloopError, ParameterError
from .loop import RunResult, run_closed_loop
from .signals import (
    FF_BY_SHAPE,
    SignalTrace,
    dc_component,
    form_factor_percent,
    format_float,
    mean_rectified,
    read_traces_csv,
    rms,
    write_traces_csv,
)
from .tuning import TuneResult, tune

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

_logger = logging.getLogger(__name__)


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path: Path, obj: Any) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2, allow_nan=False)
        f.write("\n")
    tmp.replace(path)


def summary_line(metrics: dict[str, float]) -> str:
    return f"FF(vB)={metrics['ff_vb_percent']:.6g}% FF(B)={metrics['ff_B_percent']:.6g}% RMSE={metrics['rmse_tracking']:.6g}"


def write_run(out_dir: Path, name: str, result: RunResult) -> list[Path]:
    """Writes traces, loop and manifest files; returns their paths."""
    out_dir.mkdir(parents=True, exist_ok=True)
    tr = result.traces
    traces_path = out_dir / f"{name}_traces.csv"
    write_traces_csv(traces_path, {k: tr[k] for k in ("ref", "u", "vB", "B")})
    loop_path = out_dir / f"{name}_loop.csv"
    if result.is_magnetic:
        _write_columns(loop_path, {"H": tr["H"].samples, "B": tr["vB"].samples})
    else:
        _write_columns(loop_path, {"u": tr["u"].samples, "vB": tr["vB"].samples})
    manifest_path = out_dir / f"{name}_manifest.json"
    spp = result.manifest["reference"]["samples_per_period"]
    _write_json(
        manifest_path,
        {
            "tool": "hystloop",
            "version": __version__,
            "timestamp": _timestamp(),
            "config": result.manifest,
            "metrics": result.metrics,
            "metric_window_samples": result.manifest["loop"]["measure_periods"] * spp,
            "warnings": list(result.warnings),
        },
    )
    return [traces_path, loop_path, manifest_path]


def _write_columns(path: Path, columns: dict[str, np.ndarray]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(columns))
        for row in zip(*columns.values()):
            w.writerow([format_float(x) for x in row])
    tmp.replace(path)


def _load(args: argparse.Namespace) -> Experiment:
    exp = load_experiment(args.config, args.override)
    if args.name:
        exp = Experiment(exp.loop, exp.tune, args.name)
    return exp


def cmd_simulate(args: argparse.Namespace) -> int:
    exp = _load(args)
    try:
        result = run_closed_loop(exp.loop)
    except DivergenceError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_DIVERGENCE
    for w in result.warnings:
        _logger.warning(w)
    write_run(Path(args.out), exp.name, result)
    print(summary_line(result.metrics))
    return EXIT_OK


def tune_report(exp: Experiment, result: TuneResult) -> dict[str, Any]:
    assert exp.tune is not None
    opt = exp.tune.optimizer
    objective = exp.tune.objective
    return {
        "tool": "hystloop",
        "version": __version__,
        "timestamp": _timestamp(),
        "optimizer": {"kind": type(opt).__name__.lower(), **{k: v for k, v in vars(opt).items()}},
        "objective": objective if isinstance(objective, str) else type(objective).__name__,
        "best_values": result.best_values,
        "best_score": result.best_score,
        "evaluations": result.evaluations,
        "budget": exp.tune.budget,
    }


def cmd_tune(args: argparse.Namespace) -> int:
    exp = _load(args)
    if exp.tune is None:
        raise ConfigError("tune: the config has no [tune] section")
    try:
        result = tune(exp.tune)
    except ParameterError as ex:
        raise ConfigError(f"tune.{ex.field}: {ex.message}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = tune_report(exp, result)
    report["best_values"] = {k: float(v) for k, v in result.best_values.items()}
    _write_json(out / f"{exp.name}_tune.json", report)
    names = list(exp.tune.search_space)
    _write_columns(
        out / f"{exp.name}_tune_history.csv",
        {
            "index": np.arange(len(result.history), dtype=float),
            **{n: np.array([h[0][n] for h in result.history]) for n in names},
            "score": np.array([h[1] for h in result.history]),
        },
    )
    best = " ".join(f"{k}={format_float(v)}" for k, v in report["best_values"].items())
    print(f"best: {best} score={format_float(result.best_score)} evaluations={result.evaluations}")
    return EXIT_OK


def _parse_ff(value: str) -> float:
    v = value.strip()
    if v in FF_BY_SHAPE:
        return FF_BY_SHAPE[v]
    x = float(v)
    if not (x > 0 and math.isfinite(x)):
        raise ValueError(f"theoretical form factor must be positive, got {value!r}")
    return x


def column_metrics(tr: SignalTrace, ff_theoretical: float) -> dict[str, float | None]:
    try:
        ff: float | None = form_factor_percent(tr, ff_theoretical)
    except DegenerateSignalError:
        ff = None
    return {
        "ff_percent": ff,
        "ff_theoretical": ff_theoretical,
        "rms": rms(tr),
        "mean_rectified": mean_rectified(tr),
        "dc": dc_component(tr),
    }


def cmd_metrics(args: argparse.Namespace) -> int:
    try:
        traces = read_traces_csv(args.traces_csv)
    except OSError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_IO
    except ParameterError as ex:
        print(f"error: {args.traces_csv}: {ex}", file=sys.stderr)
        return EXIT_IO
    default_ff = FF_BY_SHAPE["sine"]
    per_column: dict[str, float] = {}
    for item in args.ff_theoretical or []:
        col, sep, val = item.rpartition("=")
        try:
            if sep:
                per_column[col] = _parse_ff(val)
            else:
                default_ff = _parse_ff(val)
        except ValueError as ex:
            raise ConfigError(f"--ff-theoretical: {ex}") from None
    columns = args.columns.split(",") if args.columns else list(traces)
    for col in columns + list(per_column):
        if col not in traces:
            raise ConfigError(f"column {col!r} not found in {args.traces_csv}; available: {list(traces)}")
    n = len(next(iter(traces.values())))
    tail = args.tail or n
    if not 0 < tail <= n:
        raise ConfigError(f"--tail {tail}: trace has {n} samples")
    report: dict[str, Any] = {"samples": tail, "columns": {}}
    for col in columns:
        report["columns"][col] = column_metrics(traces[col].tail(tail), per_column.get(col, default_ff))
    if "ref" in traces and "vB" in traces:
        err = traces["ref"].tail(tail).samples - traces["vB"].tail(tail).samples
        report["rmse_tracking"] = float(np.sqrt(np.mean(err**2)))
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        for col, m in report["columns"].items():
            ff = "undefined" if m["ff_percent"] is None else f"{m['ff_percent']:.9g}%"
            print(f"{col}: FF={ff} RMS={m['rms']:.9g} mean_rect={m['mean_rectified']:.9g} DC={m['dc']:.9g}")
        if "rmse_tracking" in report:
            print(f"tracking RMSE={report['rmse_tracking']:.9g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hystloop", description="Closed-loop induction waveform control simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="INI config, or a JSON manifest from a previous run")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--name", help="artifact name prefix (default: config file stem)")

    p = sub.add_parser("simulate", help="run one closed- or open-loop experiment")
    add_run_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", help="tune controller gains")
    add_run_args(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("metrics", help="waveform metrics of an exported traces CSV")
    p.add_argument("traces_csv")
    p.add_argument(
        "--ff-theoretical",
        action="append",
        metavar="[COLUMN=]VALUE",
        help="theoretical form factor as a number or shape name (sine, square, triangle, parabolic); "
        "repeatable, optionally per column",
    )
    p.add_argument("--columns", help="comma-separated subset of columns")
    p.add_argument("--tail", type=int, help="use only the last N samples (whole periods)")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return int(args.func(args))
    except ConfigError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as ex:
        print(f"I/O error: {ex}", file=sys.stderr)
        return EXIT_IO
    except HystloopError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
