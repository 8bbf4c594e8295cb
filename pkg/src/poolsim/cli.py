"""Command-line interface.

Subcommands: validate (config check), calibrate (fit cost params from a
targets CSV), run (single simulation), replay (run against a saved trace),
sweep (expand a sweep file). User errors exit nonzero with a JSON error
report on stderr, never a stack trace.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import __version__
from .config import RunConfig, config_to_dict, cost_params_toml, load_config
from .costmodel import CalibrationInfeasible, calibrate, load_targets_csv
from .domain import InvalidConfig
from .engine import SimulationDiverged, write_event_trace
from .harness import (
    load_sweep,
    run_single,
    run_sweep,
    summary_row,
    write_ratio_grid,
    write_rows_csv,
    write_rows_json,
)
from .metrics import EmptyWindow, IncompleteRequest
from .routing import EmptyPool, UnknownModel
from .workload import read_trace, write_trace

USER_ERRORS = (
    InvalidConfig,
    CalibrationInfeasible,
    SimulationDiverged,
    EmptyWindow,
    IncompleteRequest,
    UnknownModel,
    EmptyPool,
    FileNotFoundError,
)


def _error_report(err: Exception) -> dict:
    report = {"error": type(err).__name__, "detail": str(err)}
    if isinstance(err, InvalidConfig):
        report["violations"] = err.violations
    if isinstance(err, CalibrationInfeasible) and err.residuals:
        report["residuals"] = [
            {"target": name, "relative_error": round(val, 6)} for name, val in err.residuals
        ]
    return report


def _apply_seed(config: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return config
    return RunConfig(
        cluster=config.cluster,
        workload=replace(config.workload, seed=seed),
        cost=config.cost,
    )


def _write_output(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_rows(rows: list[dict], out: str | None, fmt: str) -> None:
    import io

    buf = io.StringIO()
    if fmt == "json":
        write_rows_json(rows, buf)
    else:
        write_rows_csv(rows, buf)
    _write_output(buf.getvalue(), out)


def _cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    config.validated()
    print(json.dumps({"status": "ok", "config": config_to_dict(config)}, indent=2))
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    backbone = config.cluster.models[0]
    targets = load_targets_csv(
        args.targets, backbone.param_count, backbone.kv_bytes_per_token
    )
    params = calibrate(targets, config.cluster.gpu_spec, rel_tol=args.tolerance)
    if args.format == "json":
        _write_output(json.dumps(params.to_dict(), indent=2) + "\n", args.out)
    else:
        _write_output(cost_params_toml(params), args.out)
    return 0


def _run_one(args: argparse.Namespace, trace=None) -> int:
    config = _apply_seed(load_config(args.config), args.seed)
    summary, result = run_single(config, trace=trace, record_events=bool(args.events))
    _emit_rows([summary_row(config, summary)], args.out, args.format)
    if args.events:
        with open(args.events, "w") as fh:
            write_event_trace(result.event_trace or [], fh)
    if args.trace_out:
        with open(args.trace_out, "w") as fh:
            write_trace(result.requests, fh)
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    return _run_one(args)


def _cmd_replay(args: argparse.Namespace) -> int:
    with open(args.trace) as fh:
        trace = read_trace(fh)
    return _run_one(args, trace=trace)


def _cmd_sweep(args: argparse.Namespace) -> int:
    spec = load_sweep(args.spec)
    rows = run_sweep(spec, parallel=args.parallel)
    _emit_rows(rows, args.out, args.format)
    if args.ratio_grid_out:
        with open(args.ratio_grid_out, "w") as fh:
            write_ratio_grid(rows, fh)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poolsim",
        description=(
            "Discrete-event simulator for disaggregated multi-LLM serving with a "
            "shared decode-worker pool."
        ),
    )
    parser.add_argument("--version", action="version", version=f"poolsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a config file against all invariants")
    p_validate.add_argument("--config", required=True, help="cluster/workload TOML file")
    p_validate.set_defaults(func=_cmd_validate)

    p_cal = sub.add_parser("calibrate", help="fit cost params to a measured-targets CSV")
    p_cal.add_argument("--config", required=True, help="config providing the GPU spec and backbone")
    p_cal.add_argument(
        "--targets",
        required=True,
        help="CSV: model,prefill_bits,decode_bits,isl,osl,concurrency,ttft_ms,tpot_ms",
    )
    p_cal.add_argument("--tolerance", type=float, default=0.03, help="max relative residual")
    p_cal.add_argument("--out", help="output path (default: stdout)")
    p_cal.add_argument("--format", choices=["toml", "json"], default="toml")
    p_cal.set_defaults(func=_cmd_calibrate)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="override workload.seed")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--events", help="write the event trace log to this path")
        p.add_argument("--trace-out", help="write the request trace to this path")

    p_run = sub.add_parser("run", help="simulate a single configuration")
    add_run_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_replay = sub.add_parser("replay", help="simulate against a saved request trace")
    add_run_flags(p_replay)
    p_replay.add_argument("--trace", required=True, help="trace file (arrival_time_ns,model_id,isl,osl)")
    p_replay.set_defaults(func=_cmd_replay)

    p_sweep = sub.add_parser("sweep", help="run a sweep file")
    p_sweep.add_argument("--spec", required=True, help="sweep TOML file")
    p_sweep.add_argument("--parallel", type=int, default=1, help="worker processes")
    p_sweep.add_argument("--out", help="output path (default: stdout)")
    p_sweep.add_argument("--format", choices=["csv", "json"], default="csv")
    p_sweep.add_argument(
        "--ratio-grid-out",
        help="also write the compact offered_rps,alpha,mode,ratio grid here",
    )
    p_sweep.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as err:
        json.dump(_error_report(err), sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 2 if isinstance(err, (InvalidConfig, FileNotFoundError)) else 1


if __name__ == "__main__":
    sys.exit(main())
