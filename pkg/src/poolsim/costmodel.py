"""Analytic timing model for prefill, decode steps, and KV transfer.

Prefill is priced as compute-bound (affine in prompt tokens, with a
dequantization penalty when prefill weights are low-bit); decode steps are
priced as memory-bound (weights read once per step plus the batch's KV
traffic); transfer is latency plus bytes over the interconnect.

calibrate() fits the free constants to measured (TTFT, TPOT) pairs at
concurrency 1 with a closed-form least-squares solve, so the fit is
deterministic and reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from typing import Iterable

import numpy as np

from .domain import GpuSpec, KvHandle, ModelProfile, WorkerRole

# FLOP per token per parameter for a dense forward pass; fixes the split
# between prefill_flops_per_token and mfu, which only appear as a product.
FLOPS_PER_PARAM = 2.0


class MixedDecoderError(Exception):
    """A decode batch mixed members that do not share one weight set."""


class CalibrationInfeasible(Exception):
    """No parameter setting reproduces the targets within tolerance."""

    def __init__(self, message: str, residuals: list[tuple[str, float]] | None = None):
        self.residuals = residuals or []
        detail = "; ".join(f"{name}: {err:+.2%}" for name, err in self.residuals)
        super().__init__(message + (f" [{detail}]" if detail else ""))


@dataclass(frozen=True)
class CostParams:
    """Calibrated timing constants.

    mfu/mbu are achieved fractions of peak compute/bandwidth; they are fit
    artifacts of the measured system, not claims about the hardware.
    """

    prefill_flops_per_token: float
    prefill_fixed_overhead: float
    decode_fixed_overhead: float
    dequant_compute_penalty: float = 1.0
    mfu: float = 1.0
    mbu: float = 1.0

    def validate(self, path: str = "cost") -> list[str]:
        problems = []
        for name in (
            "prefill_flops_per_token",
            "prefill_fixed_overhead",
            "decode_fixed_overhead",
            "mfu",
            "mbu",
        ):
            if not getattr(self, name) > 0:
                problems.append(f"{path}.{name}: must be > 0, got {getattr(self, name)}")
        if not self.mfu <= 1.0:
            problems.append(f"{path}.mfu: must be <= 1, got {self.mfu}")
        if not self.mbu <= 1.0:
            problems.append(f"{path}.mbu: must be <= 1, got {self.mbu}")
        if not self.dequant_compute_penalty >= 1.0:
            problems.append(
                f"{path}.dequant_compute_penalty: must be >= 1, got "
                f"{self.dequant_compute_penalty}"
            )
        return problems

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CostParams":
        return cls(**data)


def prefill_time(
    model: ModelProfile, isl: int, params: CostParams, gpu: GpuSpec
) -> float:
    """Seconds to run one prompt of isl tokens on a prefill worker.

    Low-bit prefill weights pay a multiplicative dequantization penalty on
    the compute term; decode_weight_bits never enters.
    """
    if isl < 1:
        raise ValueError(f"isl must be >= 1, got {isl}")
    penalty = params.dequant_compute_penalty if model.prefill_weight_bits < 16 else 1.0
    compute = isl * params.prefill_flops_per_token / (params.mfu * gpu.flops)
    return params.prefill_fixed_overhead + penalty * compute


def decode_step_time_from_totals(
    total_kv_bytes: float,
    decoder_weight_bytes: float,
    params: CostParams,
    gpu: GpuSpec,
) -> float:
    """One decode iteration priced from pre-summed KV traffic.

    The engine keeps the batch's KV byte total incrementally and calls this
    once per step; decode_step_time() is the per-member wrapper.
    """
    traffic = (decoder_weight_bytes + total_kv_bytes) / (params.mbu * gpu.hbm_bandwidth)
    return params.decode_fixed_overhead + traffic


def decode_step_time(
    batch: Iterable[tuple[ModelProfile, int]],
    decoder_weight_bytes: float,
    params: CostParams,
    gpu: GpuSpec,
) -> float:
    """Seconds for one decode iteration over the given batch.

    The decoder weights are read once per step regardless of batch size
    (that amortization is what makes batching pay); KV traffic sums over
    members. Raises MixedDecoderError if members disagree on the decoder
    weight set.
    """
    members = list(batch)
    if not members:
        raise ValueError("decode batch must be non-empty")
    weight_sets = {
        (m.param_count, m.decode_weight_bits) for m, _ in members
    }
    if len(weight_sets) > 1:
        raise MixedDecoderError(
            f"batch members carry {len(weight_sets)} distinct decoder weight sets"
        )
    kv_bytes = sum(tokens * m.kv_bytes_per_token for m, tokens in members)
    return decode_step_time_from_totals(kv_bytes, decoder_weight_bytes, params, gpu)


def kv_step_bytes(batch: Iterable[tuple[ModelProfile, int]]) -> float:
    """KV bytes read by one decode step over the batch."""
    return sum(tokens * m.kv_bytes_per_token for m, tokens in batch)


def transfer_time(kv: KvHandle, gpu: GpuSpec) -> float:
    """Seconds to move a KV cache from a prefill to a decode worker."""
    if kv.resident_tokens < 1:
        raise ValueError("cannot transfer an empty KV cache")
    return (
        gpu.interconnect_latency
        + kv.resident_tokens * kv.bytes_per_token / gpu.interconnect_bandwidth
    )


def mean_decode_resident_tokens(isl: int, osl: int) -> float:
    """Average resident KV tokens over a request's charged decode steps.

    Step k (1-based, of osl-1 total) is priced at isl + k - 1 resident
    tokens, so the mean is isl + (osl - 2) / 2. Returns isl for osl < 2
    (no charged steps).
    """
    if osl < 2:
        return float(isl)
    return isl + (osl - 2) / 2.0


def single_request_tpot(
    model: ModelProfile,
    isl: int,
    osl: int,
    params: CostParams,
    gpu: GpuSpec,
    decoder_weight_bytes: float | None = None,
) -> float:
    """Closed-form TPOT of an unqueued single request (mean decode step)."""
    if osl < 2:
        raise ValueError("TPOT is undefined for osl < 2")
    w = model.weight_bytes(WorkerRole.DECODE) if decoder_weight_bytes is None else decoder_weight_bytes
    kv_bytes = mean_decode_resident_tokens(isl, osl) * model.kv_bytes_per_token
    return params.decode_fixed_overhead + (w + kv_bytes) / (params.mbu * gpu.hbm_bandwidth)


def single_request_ttft(
    model: ModelProfile, isl: int, params: CostParams, gpu: GpuSpec
) -> float:
    """Closed-form TTFT of an unqueued single request: prefill + transfer."""
    kv = KvHandle(request_id=-1, resident_tokens=isl, bytes_per_token=model.kv_bytes_per_token)
    return prefill_time(model, isl, params, gpu) + transfer_time(kv, gpu)


@dataclass(frozen=True)
class CalibrationTarget:
    """One measured operating point at concurrency 1.

    ttft_s or tpot_s may be None when that side was not measured; the fit
    uses whichever is present.
    """

    param_count: float
    kv_bytes_per_token: int
    prefill_bits: int
    decode_bits: int
    isl: int
    osl: int
    ttft_s: float | None = None
    tpot_s: float | None = None
    label: str = ""


def load_targets_csv(
    path: str, param_count: float, kv_bytes_per_token: int
) -> list[CalibrationTarget]:
    """Read calibration targets from a CSV.

    Columns: model, prefill_bits, decode_bits, isl, osl, concurrency,
    ttft_ms, tpot_ms. Empty ttft/tpot cells mean "not measured". Rows with
    concurrency != 1 are ignored (the fit is defined at concurrency 1).
    The model column is an opaque label; param_count and kv_bytes_per_token
    come from the cluster being calibrated.
    """
    targets = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if int(row["concurrency"]) != 1:
                continue
            ttft = row.get("ttft_ms", "").strip()
            tpot = row.get("tpot_ms", "").strip()
            targets.append(
                CalibrationTarget(
                    param_count=param_count,
                    kv_bytes_per_token=kv_bytes_per_token,
                    prefill_bits=int(row["prefill_bits"]),
                    decode_bits=int(row["decode_bits"]),
                    isl=int(row["isl"]),
                    osl=int(row["osl"]),
                    ttft_s=float(ttft) / 1000.0 if ttft else None,
                    tpot_s=float(tpot) / 1000.0 if tpot else None,
                    label=row.get("model", ""),
                )
            )
    return targets


def _target_profile(t: CalibrationTarget) -> ModelProfile:
    return ModelProfile(
        model_id=0,
        param_count=t.param_count,
        prefill_weight_bits=t.prefill_bits,
        decode_weight_bits=t.decode_bits,
        kv_bytes_per_token=t.kv_bytes_per_token,
    )


def calibrate(
    targets: list[CalibrationTarget],
    gpu: GpuSpec,
    rel_tol: float = 0.03,
) -> CostParams:
    """Fit CostParams to measured concurrency-1 TTFT/TPOT numbers.

    The model is linear in (prefill overhead, per-token compute seconds,
    penalized per-token compute seconds) for TTFT after subtracting the
    known transfer time, and linear in (decode overhead, seconds per byte)
    for TPOT. Both sides solve via least squares in closed form; an
    underdetermined system takes the minimum-norm solution, so the fit is
    deterministic. Raises CalibrationInfeasible when any target's
    reproduction misses rel_tol or the implied parameters are unphysical.
    """
    if len(targets) < 2:
        raise CalibrationInfeasible("need at least 2 targets spanning both precisions")

    ttft_rows = [t for t in targets if t.ttft_s is not None]
    tpot_rows = [t for t in targets if t.tpot_s is not None]
    if not ttft_rows or not tpot_rows:
        raise CalibrationInfeasible("targets must include at least one TTFT and one TPOT")

    # Prefill side: z = ttft - transfer = F + c*isl (16-bit) or F + q*isl (4-bit).
    has_lowbit = any(t.prefill_bits < 16 for t in ttft_rows)
    cols = 3 if has_lowbit else 2
    a = np.zeros((len(ttft_rows), cols))
    z = np.zeros(len(ttft_rows))
    for i, t in enumerate(ttft_rows):
        kv = KvHandle(request_id=-1, resident_tokens=t.isl, bytes_per_token=t.kv_bytes_per_token)
        z[i] = t.ttft_s - transfer_time(kv, gpu)
        a[i, 0] = 1.0
        if t.prefill_bits < 16:
            a[i, 2] = t.isl
        else:
            a[i, 1] = t.isl
    sol, *_ = np.linalg.lstsq(a, z, rcond=None)
    overhead_p = float(sol[0])
    per_token = float(sol[1])
    penalty = float(sol[2] / sol[1]) if has_lowbit and sol[1] != 0 else 1.0

    # Decode side: tpot = D + beta * (weight_bytes + mean KV bytes).
    a2 = np.zeros((len(tpot_rows), 2))
    y2 = np.zeros(len(tpot_rows))
    for i, t in enumerate(tpot_rows):
        w = t.param_count * t.decode_bits / 8.0
        kv_bytes = mean_decode_resident_tokens(t.isl, t.osl) * t.kv_bytes_per_token
        a2[i, 0] = 1.0
        a2[i, 1] = w + kv_bytes
        y2[i] = t.tpot_s
    sol2, *_ = np.linalg.lstsq(a2, y2, rcond=None)
    overhead_d = float(sol2[0])
    beta = float(sol2[1])

    if per_token <= 0 or beta <= 0:
        raise CalibrationInfeasible(
            "targets imply non-positive per-token cost; check TTFT/TPOT orderings"
        )

    flops_per_token = FLOPS_PER_PARAM * targets[0].param_count
    mfu = flops_per_token / (per_token * gpu.flops)
    if mfu > 1.0:
        # Faster than the assumed FLOP count allows: keep mfu physical and
        # absorb the difference into the per-token FLOP figure.
        mfu = 1.0
        flops_per_token = per_token * gpu.flops
    mbu = 1.0 / (beta * gpu.hbm_bandwidth)
    if mbu > 1.0:
        raise CalibrationInfeasible(
            f"decode targets imply {1.0 / beta:.3e} B/s effective bandwidth, above "
            f"the GPU peak {gpu.hbm_bandwidth:.3e} B/s"
        )

    params = CostParams(
        prefill_flops_per_token=flops_per_token,
        prefill_fixed_overhead=overhead_p,
        decode_fixed_overhead=overhead_d,
        dequant_compute_penalty=max(penalty, 1.0),
        mfu=mfu,
        mbu=mbu,
    )
    problems = params.validate()
    if problems:
        raise CalibrationInfeasible("fit produced invalid parameters: " + "; ".join(problems))

    residuals: list[tuple[str, float]] = []
    for t in targets:
        profile = _target_profile(t)
        name = t.label or f"{t.prefill_bits}/{t.decode_bits}@isl{t.isl}"
        if t.ttft_s is not None:
            pred = single_request_ttft(profile, t.isl, params, gpu)
            residuals.append((f"{name}.ttft", (pred - t.ttft_s) / t.ttft_s))
        if t.tpot_s is not None:
            pred = single_request_tpot(profile, t.isl, t.osl, params, gpu)
            residuals.append((f"{name}.tpot", (pred - t.tpot_s) / t.tpot_s))
    worst = max(abs(err) for _, err in residuals)
    if worst > rel_tol:
        raise CalibrationInfeasible(
            f"best fit misses tolerance {rel_tol:.1%} (worst {worst:.2%})",
            residuals=sorted(residuals, key=lambda r: -abs(r[1])),
        )
    return params
