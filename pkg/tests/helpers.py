"""Shared builders for the test suite."""

from __future__ import annotations

from pathlib import Path

from poolsim import (
    ArrivalProcess,
    ClusterConfig,
    CostParams,
    GpuSpec,
    ModelProfile,
    PoolMode,
    RoutingPolicy,
    WorkloadSpec,
)
from poolsim.config import RunConfig
from poolsim.domain import DecodeRule

REPO_ROOT = Path(__file__).resolve().parents[1]
TARGETS_CSV = REPO_ROOT / "configs" / "targets_llama8b.csv"
CONFIG_DIR = REPO_ROOT / "configs"

PARAM_COUNT = 8.03e9
KV_BYTES = 131072

# Round numbers so hand-computed expectations stay readable.
SIMPLE_COST = CostParams(
    prefill_flops_per_token=2.0e10,
    prefill_fixed_overhead=0.01,
    decode_fixed_overhead=0.002,
    dequant_compute_penalty=1.25,
    mfu=0.5,
    mbu=0.8,
)

SIMPLE_GPU = GpuSpec(
    flops=1.0e14,
    hbm_bandwidth=1.0e12,
    hbm_capacity=8.0e10,
    interconnect_bandwidth=5.0e10,
    interconnect_latency=1.0e-4,
)


def make_models(
    n: int,
    decode_bits: int = 16,
    prefill_bits: int = 16,
    shared: bool = True,
    param_count: float = PARAM_COUNT,
    kv_bytes: int = KV_BYTES,
) -> tuple[ModelProfile, ...]:
    return tuple(
        ModelProfile(
            model_id=i,
            param_count=param_count,
            prefill_weight_bits=prefill_bits,
            decode_weight_bits=decode_bits,
            kv_bytes_per_token=kv_bytes,
            shared_decoder=shared,
        )
        for i in range(n)
    )


def make_cluster(
    n_models: int = 4,
    mode: PoolMode = PoolMode.SHARED,
    pool_size: int = 4,
    rule: DecodeRule = DecodeRule.LEAST_OUTSTANDING_TOKENS,
    gpu: GpuSpec = SIMPLE_GPU,
    **model_kwargs,
) -> ClusterConfig:
    if mode is PoolMode.ISOLATED:
        rule = DecodeRule.PINNED
        model_kwargs.setdefault("shared", False)
    return ClusterConfig(
        models=make_models(n_models, **model_kwargs),
        decode_pool_mode=mode,
        decode_pool_size=pool_size,
        routing_policy=RoutingPolicy(decode_rule=rule),
        gpu_spec=gpu,
    )


def make_workload(
    n_models: int = 4,
    total_rps: float = 2.0,
    alpha: float = 0.0,
    isl: int = 256,
    osl: int = 16,
    grace: float = 2.0,
    window: float = 20.0,
    drain: float | None = 10.0,
    seed: int = 7,
    process: ArrivalProcess = ArrivalProcess.POISSON,
) -> WorkloadSpec:
    return WorkloadSpec(
        n_models=n_models,
        total_rps=total_rps,
        alpha=alpha,
        isl=isl,
        osl=osl,
        grace_period=grace,
        measurement_window=window,
        drain_margin=drain,
        seed=seed,
        arrival_process=process,
    )


def make_run_config(cost: CostParams = SIMPLE_COST, **kwargs) -> RunConfig:
    cluster_keys = {
        "n_models",
        "mode",
        "pool_size",
        "rule",
        "gpu",
        "decode_bits",
        "prefill_bits",
        "shared",
        "param_count",
        "kv_bytes",
    }
    cluster_kwargs = {k: v for k, v in kwargs.items() if k in cluster_keys}
    workload_kwargs = {k: v for k, v in kwargs.items() if k not in cluster_keys}
    workload_kwargs.setdefault("n_models", cluster_kwargs.get("n_models", 4))
    cluster = make_cluster(**cluster_kwargs)
    workload = make_workload(**workload_kwargs)
    return RunConfig(cluster=cluster, workload=workload, cost=cost)
