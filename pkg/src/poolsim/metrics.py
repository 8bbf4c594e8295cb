"""Per-request latency metrics and per-run aggregates.

TTFT is time to the first streamed token; TPOT averages the remaining
token intervals per request and is aggregated as a mean over requests
(matching a streaming client's per-request computation, not a ratio of
sums). Interactivity is the inverse of mean TPOT. Percentiles use the
nearest-rank method so results are bit-comparable across implementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Iterable, Sequence

from .domain import ClusterConfig, Request
from .workload import WorkloadSpec


class IncompleteRequest(Exception):
    """Metrics were asked for on a request without a full timestamp chain."""


class EmptyWindow(Exception):
    """No requests completed inside the measurement window."""


def per_request_metrics(request: Request) -> tuple[float, float, float]:
    """Return (ttft, tpot, e2e) in seconds for one completed request.

    tpot spreads the post-first-token span over realized_osl - 1 intervals;
    a zero span yields the degenerate tpot == 0.
    """
    if (
        request.first_token_time is None
        or request.completion_time is None
        or request.arrival_time is None
    ):
        raise IncompleteRequest(f"request {request.id} lacks a full timestamp chain")
    if request.realized_osl < 2:
        raise IncompleteRequest(
            f"request {request.id}: tpot needs realized_osl >= 2, got {request.realized_osl}"
        )
    ttft = request.first_token_time - request.arrival_time
    tpot = (request.completion_time - request.first_token_time) / (request.realized_osl - 1)
    e2e = request.completion_time - request.arrival_time
    return ttft, tpot, e2e


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    if not values:
        raise ValueError("percentile of empty sequence")
    ordered = sorted(values)
    rank = math.ceil(pct / 100.0 * len(ordered))
    return ordered[max(rank, 1) - 1]


@dataclass(frozen=True)
class RunSummary:
    """Aggregates over the requests completed in the measurement window."""

    completed_requests: int
    ttft_mean_s: float
    ttft_p50_s: float
    ttft_p99_s: float
    tpot_mean_s: float
    tpot_p50_s: float
    tpot_p99_s: float
    itl_mean_s: float
    interactivity_tok_s: float
    output_throughput_tok_s: float
    throughput_per_decode_gpu_tok_s: float
    throughput_per_gpu_all_tok_s: float
    achieved_rps: float
    offered_rps: float
    achieved_offered_ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


SUMMARY_FIELDS = [
    "completed_requests",
    "ttft_mean_s",
    "ttft_p50_s",
    "ttft_p99_s",
    "tpot_mean_s",
    "tpot_p50_s",
    "tpot_p99_s",
    "itl_mean_s",
    "interactivity_tok_s",
    "output_throughput_tok_s",
    "throughput_per_decode_gpu_tok_s",
    "throughput_per_gpu_all_tok_s",
    "achieved_rps",
    "offered_rps",
    "achieved_offered_ratio",
]


def summarize(
    window_requests: Iterable[Request],
    cluster: ClusterConfig,
    spec: WorkloadSpec,
) -> RunSummary:
    """Aggregate window-completed requests into a RunSummary.

    The per-GPU throughput divides by the decode pool size (the prefill
    tier is constant across compared configurations); the all-GPU variant
    is also reported. Raises EmptyWindow when nothing completed in the
    window.
    """
    requests = list(window_requests)
    if not requests:
        raise EmptyWindow("no requests completed inside the measurement window")

    ttfts: list[float] = []
    tpots: list[float] = []
    decode_span = 0.0
    decode_intervals = 0
    for r in requests:
        ttft, tpot, _ = per_request_metrics(r)
        ttfts.append(ttft)
        tpots.append(tpot)
        decode_span += r.completion_time - r.first_token_time  # type: ignore[operator]
        decode_intervals += r.realized_osl - 1

    window = spec.measurement_window
    tpot_mean = sum(tpots) / len(tpots)
    output_tokens = sum(r.realized_osl for r in requests)
    output_throughput = output_tokens / window
    achieved_rps = len(requests) / window
    return RunSummary(
        completed_requests=len(requests),
        ttft_mean_s=sum(ttfts) / len(ttfts),
        ttft_p50_s=nearest_rank(ttfts, 50),
        ttft_p99_s=nearest_rank(ttfts, 99),
        tpot_mean_s=tpot_mean,
        tpot_p50_s=nearest_rank(tpots, 50),
        tpot_p99_s=nearest_rank(tpots, 99),
        itl_mean_s=decode_span / decode_intervals if decode_intervals else 0.0,
        interactivity_tok_s=1.0 / tpot_mean if tpot_mean > 0 else float("inf"),
        output_throughput_tok_s=output_throughput,
        throughput_per_decode_gpu_tok_s=output_throughput / cluster.decode_pool_size,
        throughput_per_gpu_all_tok_s=output_throughput / cluster.n_gpus_total,
        achieved_rps=achieved_rps,
        offered_rps=spec.total_rps,
        achieved_offered_ratio=achieved_rps / spec.total_rps,
    )
