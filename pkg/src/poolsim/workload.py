"""Open-loop workload generation.

Total offered load is split across models by a Zipf distribution over
popularity rank; each model gets an independent arrival stream (Poisson by
default, fixed-interval for exact unit tests) which are merged into one
time-ordered trace.

PRNG scheme: each model's stream uses random.Random seeded with
SHA-256("poolsim-trace:<seed>:<model_id>") truncated to 64 bits, and
Poisson gaps are drawn with expovariate(). Arrival times are quantized to
integer nanoseconds, so a trace is byte-for-byte reproducible through
serialization and across processes.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable

from .domain import InvalidConfig, Request


class ArrivalProcess(str, Enum):
    POISSON = "poisson"
    DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class WorkloadSpec:
    """Offered-load description for one run.

    drain_margin extends the simulated horizon past the measurement window
    so requests completing near the window edge see a loaded system; only
    window completions are ever summarized.
    """

    n_models: int
    total_rps: float
    alpha: float = 0.0
    isl: int = 1024
    osl: int = 1024
    grace_period: float = 30.0
    measurement_window: float = 60.0
    drain_margin: float | None = None
    seed: int = 0
    arrival_process: ArrivalProcess = ArrivalProcess.POISSON

    @property
    def horizon(self) -> float:
        margin = 2.0 * self.measurement_window if self.drain_margin is None else self.drain_margin
        return self.grace_period + self.measurement_window + margin

    def validate(self, path: str = "workload") -> list[str]:
        problems = []
        if self.n_models < 1:
            problems.append(f"{path}.n_models: must be >= 1, got {self.n_models}")
        if not self.total_rps > 0:
            problems.append(f"{path}.total_rps: must be > 0, got {self.total_rps}")
        if self.alpha < 0:
            problems.append(f"{path}.alpha: must be >= 0, got {self.alpha}")
        if self.isl < 1:
            problems.append(f"{path}.isl: must be >= 1, got {self.isl}")
        if self.osl < 1:
            problems.append(f"{path}.osl: must be >= 1, got {self.osl}")
        if self.grace_period < 0:
            problems.append(f"{path}.grace_period: must be >= 0, got {self.grace_period}")
        if not self.measurement_window > 0:
            problems.append(
                f"{path}.measurement_window: must be > 0, got {self.measurement_window}"
            )
        if self.drain_margin is not None and self.drain_margin < 0:
            problems.append(f"{path}.drain_margin: must be >= 0, got {self.drain_margin}")
        return problems


def zipf_split(n_models: int, alpha: float, total_rps: float) -> list[float]:
    """Split total_rps across popularity ranks 1..n by P(i) = i^-a / sum.

    Model id m has rank m+1, so model 0 is the most popular; alpha = 0 is
    the uniform split.
    """
    if n_models < 1:
        raise ValueError(f"n_models must be >= 1, got {n_models}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if not total_rps > 0:
        raise ValueError(f"total_rps must be > 0, got {total_rps}")
    weights = [float(i) ** -alpha for i in range(1, n_models + 1)]
    norm = sum(weights)
    return [total_rps * w / norm for w in weights]


def _stream_rng(seed: int, model_id: int) -> random.Random:
    digest = hashlib.sha256(f"poolsim-trace:{seed}:{model_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _arrival_times_ns(
    rate: float, horizon: float, process: ArrivalProcess, rng: random.Random
) -> list[int]:
    times: list[int] = []
    if process is ArrivalProcess.DETERMINISTIC:
        interval = 1.0 / rate
        k = 0
        while k * interval < horizon:
            times.append(round(k * interval * 1e9))
            k += 1
    else:
        t = rng.expovariate(rate)
        while t < horizon:
            times.append(round(t * 1e9))
            t += rng.expovariate(rate)
    return times


def generate_trace(spec: WorkloadSpec) -> list[Request]:
    """Produce the merged, time-ordered request trace for one run.

    Pure function of the spec: the same spec always yields the identical
    trace. Request ids are assigned in merged arrival order; ties keep
    model order. Deterministic mode fires each model at t = 0, 1/R_i,
    2/R_i, ...; Poisson mode starts at the first exponential gap.
    """
    problems = spec.validate()
    if problems:
        raise InvalidConfig(problems)
    rates = zipf_split(spec.n_models, spec.alpha, spec.total_rps)
    merged: list[tuple[int, int]] = []
    for model_id, rate in enumerate(rates):
        rng = _stream_rng(spec.seed, model_id)
        for ns in _arrival_times_ns(rate, spec.horizon, spec.arrival_process, rng):
            merged.append((ns, model_id))
    merged.sort(key=lambda item: item[0])
    return [
        Request(
            id=i,
            model_id=model_id,
            arrival_time=ns * 1e-9,
            isl=spec.isl,
            target_osl=spec.osl,
        )
        for i, (ns, model_id) in enumerate(merged)
    ]


def measurement_filter(requests: Iterable[Request], spec: WorkloadSpec) -> list[Request]:
    """Keep requests completed inside the closed measurement window.

    The window is [grace_period, grace_period + measurement_window] on
    completion time, both endpoints included.
    """
    lo = spec.grace_period
    hi = spec.grace_period + spec.measurement_window
    return [
        r
        for r in requests
        if r.completion_time is not None and lo <= r.completion_time <= hi
    ]


TRACE_HEADER = "arrival_time_ns,model_id,isl,osl"


def write_trace(requests: Iterable[Request], fh: IO[str]) -> None:
    fh.write(TRACE_HEADER + "\n")
    for r in requests:
        fh.write(f"{round(r.arrival_time * 1e9)},{r.model_id},{r.isl},{r.target_osl}\n")


def read_trace(fh: IO[str]) -> list[Request]:
    header = fh.readline().strip()
    if header != TRACE_HEADER:
        raise ValueError(f"bad trace header: {header!r} (expected {TRACE_HEADER!r})")
    requests = []
    for i, line in enumerate(fh):
        line = line.strip()
        if not line:
            continue
        ns, model_id, isl, osl = line.split(",")
        requests.append(
            Request(
                id=i,
                model_id=int(model_id),
                arrival_time=int(ns) * 1e-9,
                isl=int(isl),
                target_osl=int(osl),
            )
        )
    return requests
