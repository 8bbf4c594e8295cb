"""Experiment orchestration: single runs, sweeps, and result tables.

A sweep is the Cartesian product of axis value lists over a base config,
times a replicate count. Cells are independent simulations and may execute
in a process pool; rows are buffered and written in deterministic
(cell_index, replicate) order, so the output is byte-identical regardless
of the worker count. A failing cell becomes a row with its error column
set and never aborts the sweep.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import IO

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import engine
from .config import AXIS_NAMES, RunConfig, apply_axis, config_from_dict, config_hash, load_config
from .domain import InvalidConfig, Request
from .engine import SimResult, SimulationDiverged
from .metrics import SUMMARY_FIELDS, EmptyWindow, IncompleteRequest, RunSummary, summarize
from .workload import generate_trace, measurement_filter

ROW_FIELDS = (
    [
        "config_hash",
        "decode_pool_mode",
        "decode_pool_size",
        "alpha",
        "isl",
        "osl",
        "offered_rps",
    ]
    + [f for f in SUMMARY_FIELDS if f != "offered_rps"]
    + ["seed", "cell_index", "replicate", "error"]
)


@dataclass(frozen=True)
class SweepSpec:
    """Base config plus axis overrides; axes apply in listed order."""

    base: RunConfig
    axes: tuple[tuple[str, tuple], ...] = ()
    replicates: int = 1
    max_cells: int = 4096

    def validate(self) -> None:
        problems = []
        if self.replicates < 1:
            problems.append(f"sweep.replicates: must be >= 1, got {self.replicates}")
        size = self.replicates
        for name, values in self.axes:
            if name not in AXIS_NAMES:
                problems.append(f"sweep.axes.{name}: unknown axis (choose from {list(AXIS_NAMES)})")
            if not values:
                problems.append(f"sweep.axes.{name}: empty value list")
            size *= max(len(values), 1)
        if size > self.max_cells:
            problems.append(
                f"sweep: {size} runs exceed the max_cells cap {self.max_cells}"
            )
        if problems:
            raise InvalidConfig(problems)


def load_sweep(path: str) -> SweepSpec:
    """Read a sweep file: base_config = "..." (or inline [base]) + [axes]."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    if "base_config" in data:
        base_path = data.pop("base_config")
        if not os.path.isabs(base_path):
            base_path = os.path.join(os.path.dirname(os.path.abspath(path)), base_path)
        base = load_config(base_path)
    elif "base" in data:
        base = config_from_dict(data.pop("base"))
    else:
        raise InvalidConfig(["sweep file needs base_config = \"path\" or an inline [base] table"])
    axes_table = data.pop("axes", {})
    axes = tuple((name, tuple(values)) for name, values in axes_table.items())
    spec = SweepSpec(
        base=base,
        axes=axes,
        replicates=int(data.pop("replicates", 1)),
        max_cells=int(data.pop("max_cells", 4096)),
    )
    if data:
        raise InvalidConfig([f"unknown keys in sweep file: {sorted(data)}"])
    spec.validate()
    return spec


@dataclass(frozen=True)
class Cell:
    index: int
    replicate: int
    overrides: tuple[tuple[str, object], ...]
    config: RunConfig


def expand_cells(spec: SweepSpec) -> list[Cell]:
    spec.validate()
    cells = []
    names = [name for name, _ in spec.axes]
    value_lists = [values for _, values in spec.axes]
    for index, combo in enumerate(itertools.product(*value_lists)):
        cell_config = spec.base
        for name, value in zip(names, combo):
            cell_config = apply_axis(cell_config, name, value)
        for rep in range(spec.replicates):
            rep_config = cell_config
            if rep > 0:
                rep_config = RunConfig(
                    cluster=rep_config.cluster,
                    workload=replace(
                        rep_config.workload, seed=rep_config.workload.seed + rep
                    ),
                    cost=rep_config.cost,
                )
            cells.append(
                Cell(
                    index=index,
                    replicate=rep,
                    overrides=tuple(zip(names, combo)),
                    config=rep_config,
                )
            )
    return cells


def run_single(
    config: RunConfig,
    trace: list[Request] | None = None,
    record_events: bool = False,
    drain: bool = False,
) -> tuple[RunSummary, SimResult]:
    """Run one configuration end to end and summarize its window.

    trace overrides the generated workload (replay). drain=True ignores the
    horizon and runs until every request finishes (useful for tests).
    """
    config.validated()
    if config.cost is None:
        raise InvalidConfig(
            ["[cost] section missing: run `poolsim calibrate` and paste its output"]
        )
    workload = config.workload
    if trace is None:
        trace = generate_trace(workload)
    result = engine.run(
        config.cluster,
        trace,
        config.cost,
        horizon=None if drain else workload.horizon,
        record_events=record_events,
    )
    window = measurement_filter(result.completed, workload)
    summary = summarize(window, config.cluster, workload)
    return summary, result


def summary_row(
    config: RunConfig,
    summary: RunSummary | None,
    error: str = "",
    cell_index: int = 0,
    replicate: int = 0,
) -> dict:
    """Assemble one result row from an already-computed summary (or error)."""
    row = {
        "config_hash": config_hash(config),
        "decode_pool_mode": config.cluster.decode_pool_mode.value,
        "decode_pool_size": config.cluster.decode_pool_size,
        "alpha": config.workload.alpha,
        "isl": config.workload.isl,
        "osl": config.workload.osl,
        "offered_rps": config.workload.total_rps,
        "seed": config.workload.seed,
        "cell_index": cell_index,
        "replicate": replicate,
        "error": error,
    }
    summary_dict = summary.to_dict() if summary is not None else {}
    for name in SUMMARY_FIELDS:
        if name != "offered_rps":
            row[name] = summary_dict.get(name, "")
    return row


def _cell_row(cell: Cell) -> dict:
    try:
        summary, _ = run_single(cell.config)
    except (InvalidConfig, EmptyWindow, IncompleteRequest, SimulationDiverged) as err:
        return summary_row(
            cell.config,
            None,
            error=f"{type(err).__name__}: {err}",
            cell_index=cell.index,
            replicate=cell.replicate,
        )
    return summary_row(cell.config, summary, cell_index=cell.index, replicate=cell.replicate)


def run_sweep(spec: SweepSpec, parallel: int = 1) -> list[dict]:
    """Execute every cell and return rows in deterministic order."""
    cells = expand_cells(spec)
    if parallel <= 1 or len(cells) <= 1:
        rows = [_cell_row(cell) for cell in cells]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_cell_row, cells, chunksize=1))
    rows.sort(key=lambda r: (r["cell_index"], r["replicate"]))
    return rows


def write_rows_csv(rows: list[dict], fh: IO[str]) -> None:
    writer = csv.DictWriter(fh, fieldnames=ROW_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in ROW_FIELDS})


def write_rows_json(rows: list[dict], fh: IO[str]) -> None:
    json.dump(rows, fh, indent=2, sort_keys=True)
    fh.write("\n")


def rows_csv_bytes(rows: list[dict]) -> bytes:
    import io

    buf = io.StringIO()
    write_rows_csv(rows, buf)
    return buf.getvalue().encode()


RATIO_GRID_FIELDS = ["offered_rps", "alpha", "mode", "ratio"]


def write_ratio_grid(rows: list[dict], fh: IO[str]) -> None:
    """Compact saturation-grid view: one ratio per (offered load, skew, mode).

    Failed cells appear with an empty ratio so the grid stays rectangular.
    """
    writer = csv.DictWriter(fh, fieldnames=RATIO_GRID_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(
            {
                "offered_rps": row["offered_rps"],
                "alpha": row["alpha"],
                "mode": row["decode_pool_mode"],
                "ratio": row.get("achieved_offered_ratio", ""),
            }
        )
