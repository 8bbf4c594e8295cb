"""Declarative run configuration: one TOML file per experiment.

Sections: [cluster] (pool mode/size), [cluster.gpu], [cluster.models]
(a template stamped out `count` times), [routing], [workload], and
optionally [cost] (calibrated timing constants, producible with
`poolsim calibrate`). Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .costmodel import CostParams
from .domain import (
    ClusterConfig,
    DecodeRule,
    GpuSpec,
    InvalidConfig,
    ModelProfile,
    PoolMode,
    RoutingPolicy,
    validate_cluster,
)
from .workload import ArrivalProcess, WorkloadSpec

# Sweepable axis names and where they land.
AXIS_NAMES = (
    "decode_pool_size",
    "decode_pool_mode",
    "alpha",
    "osl",
    "isl",
    "offered_rps",
    "decode_weight_bits",
    "routing_policy",
    "seed",
)


@dataclass(frozen=True)
class RunConfig:
    cluster: ClusterConfig
    workload: WorkloadSpec
    cost: CostParams | None = None

    def validated(self) -> "RunConfig":
        problems: list[str] = []
        try:
            validate_cluster(self.cluster)
        except InvalidConfig as err:
            problems.extend(err.violations)
        problems.extend(self.workload.validate())
        if self.workload.n_models != self.cluster.n_models:
            problems.append(
                f"workload.n_models ({self.workload.n_models}) != number of cluster "
                f"models ({self.cluster.n_models})"
            )
        if self.cost is not None:
            problems.extend(self.cost.validate())
        if problems:
            raise InvalidConfig(problems)
        return self


def _section(data: dict, name: str, required: bool = True) -> dict:
    value = data.get(name)
    if value is None:
        if required:
            raise InvalidConfig([f"missing required section [{name}]"])
        return {}
    if not isinstance(value, dict):
        raise InvalidConfig([f"[{name}] must be a table"])
    return dict(value)


def _reject_unknown(section: dict, path: str) -> None:
    if section:
        raise InvalidConfig([f"unknown keys in [{path}]: {sorted(section)}"])


def _build_gpu(section: dict) -> GpuSpec:
    defaults = GpuSpec()
    gpu = GpuSpec(
        flops=float(section.pop("flops", defaults.flops)),
        hbm_bandwidth=float(section.pop("hbm_bandwidth", defaults.hbm_bandwidth)),
        hbm_capacity=float(section.pop("hbm_capacity", defaults.hbm_capacity)),
        interconnect_bandwidth=float(
            section.pop("interconnect_bandwidth", defaults.interconnect_bandwidth)
        ),
        interconnect_latency=float(
            section.pop("interconnect_latency", defaults.interconnect_latency)
        ),
    )
    _reject_unknown(section, "cluster.gpu")
    return gpu


def _model_from_entry(entry: dict, model_id: int, path: str) -> ModelProfile:
    entry = dict(entry)
    entry.pop("model_id", None)
    profile = ModelProfile(
        model_id=model_id,
        param_count=float(entry.pop("param_count", 8.03e9)),
        prefill_weight_bits=int(entry.pop("prefill_weight_bits", 16)),
        decode_weight_bits=int(entry.pop("decode_weight_bits", 16)),
        kv_bytes_per_token=int(entry.pop("kv_bytes_per_token", 131072)),
        shared_decoder=bool(entry.pop("shared_decoder", False)),
    )
    _reject_unknown(entry, path)
    return profile


def _build_models(section) -> tuple[ModelProfile, ...]:
    # Either a template table stamped out `count` times, or an explicit list.
    if isinstance(section, list):
        return tuple(
            _model_from_entry(entry, i, f"cluster.models[{i}]")
            for i, entry in enumerate(section)
        )
    section = dict(section)
    count = int(section.pop("count", 1))
    if count < 1:
        raise InvalidConfig(["cluster.models.count: must be >= 1"])
    template = _model_from_entry(section, 0, "cluster.models")
    return tuple(replace(template, model_id=i) for i in range(count))


def _build_routing(section: dict) -> RoutingPolicy:
    rule_name = str(section.pop("decode_rule", "least_outstanding_tokens"))
    try:
        rule = DecodeRule(rule_name)
    except ValueError:
        raise InvalidConfig(
            [
                f"routing.decode_rule: unknown rule '{rule_name}' "
                f"(choose from {[r.value for r in DecodeRule]})"
            ]
        ) from None
    policy = RoutingPolicy(
        decode_rule=rule,
        seed=int(section.pop("seed", 0)),
        load_metric=str(section.pop("load_metric", "anticipatory")),
    )
    _reject_unknown(section, "routing")
    if policy.load_metric not in ("anticipatory", "kv_only"):
        raise InvalidConfig(
            [f"routing.load_metric: must be 'anticipatory' or 'kv_only', got '{policy.load_metric}'"]
        )
    return policy


def _build_cluster(data: dict) -> ClusterConfig:
    cluster = _section(data, "cluster")
    mode_name = str(cluster.pop("decode_pool_mode", "shared"))
    try:
        mode = PoolMode(mode_name)
    except ValueError:
        raise InvalidConfig(
            [f"cluster.decode_pool_mode: must be 'isolated' or 'shared', got '{mode_name}'"]
        ) from None
    models_raw = cluster.pop("models", None)
    if models_raw is None:
        raise InvalidConfig(["missing required section [cluster.models]"])
    models = _build_models(models_raw)
    gpu = _build_gpu(_section(cluster, "gpu", required=False))
    cluster.pop("gpu", None)
    pool_size = int(cluster.pop("decode_pool_size", len(models)))
    _reject_unknown(cluster, "cluster")
    routing = _build_routing(_section(data, "routing", required=False))
    return ClusterConfig(
        models=models,
        decode_pool_mode=mode,
        decode_pool_size=pool_size,
        routing_policy=routing,
        gpu_spec=gpu,
    )


def _build_workload(data: dict, n_models: int) -> WorkloadSpec:
    section = _section(data, "workload")
    process_name = str(section.pop("arrival_process", "poisson"))
    try:
        process = ArrivalProcess(process_name)
    except ValueError:
        raise InvalidConfig(
            [
                f"workload.arrival_process: must be 'poisson' or 'deterministic', "
                f"got '{process_name}'"
            ]
        ) from None
    drain = section.pop("drain_margin", None)
    spec = WorkloadSpec(
        n_models=n_models,
        total_rps=float(section.pop("total_rps")),
        alpha=float(section.pop("alpha", 0.0)),
        isl=int(section.pop("isl", 1024)),
        osl=int(section.pop("osl", 1024)),
        grace_period=float(section.pop("grace_period", 30.0)),
        measurement_window=float(section.pop("measurement_window", 60.0)),
        drain_margin=float(drain) if drain is not None else None,
        seed=int(section.pop("seed", 0)),
        arrival_process=process,
    )
    _reject_unknown(section, "workload")
    return spec


def _build_cost(data: dict) -> CostParams | None:
    section = _section(data, "cost", required=False)
    if not section:
        return None
    params = CostParams(
        prefill_flops_per_token=float(section.pop("prefill_flops_per_token")),
        prefill_fixed_overhead=float(section.pop("prefill_fixed_overhead")),
        decode_fixed_overhead=float(section.pop("decode_fixed_overhead")),
        dequant_compute_penalty=float(section.pop("dequant_compute_penalty", 1.0)),
        mfu=float(section.pop("mfu", 1.0)),
        mbu=float(section.pop("mbu", 1.0)),
    )
    _reject_unknown(section, "cost")
    return params


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    try:
        cluster = _build_cluster(data)
        workload = _build_workload(data, cluster.n_models)
        cost = _build_cost(data)
    except KeyError as err:
        raise InvalidConfig([f"missing required key: {err.args[0]}"]) from None
    for key in data:
        if key not in ("cluster", "workload", "routing", "cost"):
            raise InvalidConfig([f"unknown top-level section [{key}]"])
    return RunConfig(cluster=cluster, workload=workload, cost=cost)


def load_config(path: str) -> RunConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data)


def apply_axis(config: RunConfig, axis: str, value) -> RunConfig:
    """Return a copy of the config with one sweep axis overridden.

    Setting decode_pool_mode to isolated also forces the pool size to the
    model count and the decode rule to pinned, so one sweep file can span
    both modes.
    """
    cluster, workload = config.cluster, config.workload
    if axis == "decode_pool_size":
        cluster = replace(cluster, decode_pool_size=int(value))
    elif axis == "decode_pool_mode":
        mode = PoolMode(value)
        cluster = replace(cluster, decode_pool_mode=mode)
        if mode is PoolMode.ISOLATED:
            cluster = replace(
                cluster,
                decode_pool_size=cluster.n_models,
                routing_policy=replace(
                    cluster.routing_policy, decode_rule=DecodeRule.PINNED
                ),
            )
    elif axis == "alpha":
        workload = replace(workload, alpha=float(value))
    elif axis == "osl":
        workload = replace(workload, osl=int(value))
    elif axis == "isl":
        workload = replace(workload, isl=int(value))
    elif axis == "offered_rps":
        workload = replace(workload, total_rps=float(value))
    elif axis == "seed":
        workload = replace(workload, seed=int(value))
    elif axis == "decode_weight_bits":
        cluster = replace(
            cluster,
            models=tuple(
                replace(m, decode_weight_bits=int(value)) for m in cluster.models
            ),
        )
    elif axis == "routing_policy":
        cluster = replace(
            cluster,
            routing_policy=replace(
                cluster.routing_policy, decode_rule=DecodeRule(value)
            ),
        )
    else:
        raise InvalidConfig(
            [f"unknown sweep axis '{axis}' (choose from {list(AXIS_NAMES)})"]
        )
    return RunConfig(cluster=cluster, workload=workload, cost=config.cost)


def config_to_dict(config: RunConfig) -> dict:
    """Canonical plain-dict form (used for hashing and JSON output)."""
    cluster = config.cluster
    return {
        "cluster": {
            "decode_pool_mode": cluster.decode_pool_mode.value,
            "decode_pool_size": cluster.decode_pool_size,
            "gpu": {
                "flops": cluster.gpu_spec.flops,
                "hbm_bandwidth": cluster.gpu_spec.hbm_bandwidth,
                "hbm_capacity": cluster.gpu_spec.hbm_capacity,
                "interconnect_bandwidth": cluster.gpu_spec.interconnect_bandwidth,
                "interconnect_latency": cluster.gpu_spec.interconnect_latency,
            },
            "models": [
                {
                    "model_id": m.model_id,
                    "param_count": m.param_count,
                    "prefill_weight_bits": m.prefill_weight_bits,
                    "decode_weight_bits": m.decode_weight_bits,
                    "kv_bytes_per_token": m.kv_bytes_per_token,
                    "shared_decoder": m.shared_decoder,
                }
                for m in cluster.models
            ],
        },
        "routing": {
            "decode_rule": cluster.routing_policy.decode_rule.value,
            "seed": cluster.routing_policy.seed,
            "load_metric": cluster.routing_policy.load_metric,
        },
        "workload": {
            "total_rps": config.workload.total_rps,
            "alpha": config.workload.alpha,
            "isl": config.workload.isl,
            "osl": config.workload.osl,
            "grace_period": config.workload.grace_period,
            "measurement_window": config.workload.measurement_window,
            "drain_margin": config.workload.drain_margin,
            "seed": config.workload.seed,
            "arrival_process": config.workload.arrival_process.value,
        },
        "cost": config.cost.to_dict() if config.cost else None,
    }


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def cost_params_toml(params: CostParams) -> str:
    """Render a [cost] section pasteable into a config file."""
    lines = ["[cost]"]
    for key, value in params.to_dict().items():
        lines.append(f"{key} = {value!r}")
    return "\n".join(lines) + "\n"
