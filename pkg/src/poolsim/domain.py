"""Core value types for the serving simulator.

Everything here is plain data: requests, model profiles, GPU specs, worker
state, and the cluster configuration. The simulation engine mutates worker
state; all other types are treated as immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


IN_TRANSIT = -1  # KvHandle.location value while the cache is off-worker


class PoolMode(str, Enum):
    ISOLATED = "isolated"
    SHARED = "shared"


class WorkerRole(str, Enum):
    PREFILL = "prefill"
    DECODE = "decode"


class RequestOutcome(str, Enum):
    IN_FLIGHT = "in_flight"
    COMPLETED = "completed"
    OVER_CAPACITY = "over_capacity"


class InvalidConfig(Exception):
    """Raised when a cluster/workload configuration violates an invariant.

    Carries the full list of violations so a user can fix everything in one
    pass instead of playing whack-a-mole.
    """

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass
class Request:
    """One inference job moving through prefill, transfer, and decode.

    Timestamps are absolute simulation seconds and satisfy
    arrival_time <= prefill_start <= prefill_end <= transfer_end
    <= first_token_time <= completion_time once the request completes.
    The first output token is produced by prefill and delivered when the
    KV transfer lands, so first_token_time == transfer_end.
    """

    id: int
    model_id: int
    arrival_time: float
    isl: int
    target_osl: int
    realized_osl: int = 0
    prefill_start: float | None = None
    prefill_end: float | None = None
    transfer_end: float | None = None
    first_token_time: float | None = None
    completion_time: float | None = None
    outcome: RequestOutcome = RequestOutcome.IN_FLIGHT

    def __post_init__(self):
        if self.isl < 1:
            raise ValueError(f"request {self.id}: isl must be >= 1, got {self.isl}")
        if self.target_osl < 1:
            raise ValueError(
                f"request {self.id}: target_osl must be >= 1, got {self.target_osl}"
            )

    @property
    def completed(self) -> bool:
        return self.outcome is RequestOutcome.COMPLETED

    def timestamp_chain(self) -> list[float]:
        """All lifecycle timestamps in order; raises if any is missing."""
        chain = [
            self.arrival_time,
            self.prefill_start,
            self.prefill_end,
            self.transfer_end,
            self.first_token_time,
            self.completion_time,
        ]
        if any(t is None for t in chain):
            raise ValueError(f"request {self.id} has an incomplete timestamp chain")
        return chain  # type: ignore[return-value]


@dataclass
class KvHandle:
    """Token-counter abstraction of a request's KV cache.

    resident_tokens equals isl right after prefill and grows by one per
    decode step. location is a decode worker id once the request is in an
    active batch, IN_TRANSIT before that (covering both the wire and the
    worker's admission queue).
    """

    request_id: int
    resident_tokens: int
    bytes_per_token: int
    location: int = IN_TRANSIT

    @property
    def resident_bytes(self) -> int:
        return self.resident_tokens * self.bytes_per_token


@dataclass(frozen=True)
class ModelProfile:
    """Static parameters of one deployed model instance."""

    model_id: int
    param_count: float
    prefill_weight_bits: int = 16
    decode_weight_bits: int = 16
    kv_bytes_per_token: int = 131072
    shared_decoder: bool = False

    def weight_bytes(self, phase: WorkerRole) -> float:
        bits = (
            self.prefill_weight_bits
            if phase is WorkerRole.PREFILL
            else self.decode_weight_bits
        )
        return self.param_count * bits / 8.0


@dataclass(frozen=True)
class GpuSpec:
    """Hardware abstraction of one simulated GPU."""

    flops: float = 3.12e14
    hbm_bandwidth: float = 2.039e12
    hbm_capacity: float = 8.0e10
    interconnect_bandwidth: float = 6.4e10
    interconnect_latency: float = 2.0e-4

    def validate(self, path: str = "gpu") -> list[str]:
        problems = []
        for name in (
            "flops",
            "hbm_bandwidth",
            "hbm_capacity",
            "interconnect_bandwidth",
            "interconnect_latency",
        ):
            value = getattr(self, name)
            if not value > 0:
                problems.append(f"{path}.{name}: must be > 0, got {value}")
        return problems


@dataclass
class WorkerState:
    """Mutable state of one simulated GPU worker.

    The engine owns instances of this type; routing policies read them as
    snapshots. queue holds requests not yet executing (prefill FIFO or
    decode admission queue); active_batch holds request ids in flight.
    """

    worker_id: int
    role: WorkerRole
    served_models: frozenset[int]
    gpu: GpuSpec
    resident_kv_tokens: int = 0
    queue: list[int] = field(default_factory=list)
    active_batch: set[int] = field(default_factory=set)
    busy_until: float = 0.0


class DecodeRule(str, Enum):
    PINNED = "pinned"
    LEAST_OUTSTANDING_TOKENS = "least_outstanding_tokens"
    ROUND_ROBIN = "round_robin"
    WEIGHTED_RANDOM = "weighted_random"


@dataclass(frozen=True)
class RoutingPolicy:
    """Dispatch rules: fixed per-model prefill map, pluggable decode rule.

    load_metric selects what LeastOutstandingTokens counts: "anticipatory"
    (current KV + queued prompt tokens + remaining target tokens) or
    "kv_only" (current KV alone).
    """

    decode_rule: DecodeRule = DecodeRule.LEAST_OUTSTANDING_TOKENS
    seed: int = 0
    load_metric: str = "anticipatory"


@dataclass(frozen=True)
class ClusterConfig:
    """Deployment shape: one prefill worker per model plus a decode pool.

    Isolated mode pins one decode worker per model (pool size must equal the
    model count); shared mode lets any decode worker serve any model, which
    requires every model to use the common shared decoder.
    """

    models: tuple[ModelProfile, ...]
    decode_pool_mode: PoolMode
    decode_pool_size: int
    routing_policy: RoutingPolicy = RoutingPolicy()
    gpu_spec: GpuSpec = GpuSpec()

    @property
    def n_models(self) -> int:
        return len(self.models)

    @property
    def n_gpus_total(self) -> int:
        return self.n_models + self.decode_pool_size

    def decode_weight_bytes(self, model: ModelProfile) -> float:
        return model.weight_bytes(WorkerRole.DECODE)


def validate_cluster(config: ClusterConfig) -> ClusterConfig:
    """Check every structural invariant; return the config or raise.

    Raises InvalidConfig listing all violations with the offending field
    path, so a single run reports every problem at once.
    """
    problems: list[str] = []

    if not config.models:
        problems.append("cluster.models: at least one model is required")
    if config.decode_pool_size < 1:
        problems.append(
            f"cluster.decode_pool_size: must be >= 1, got {config.decode_pool_size}"
        )

    problems.extend(config.gpu_spec.validate("cluster.gpu"))

    seen_ids = set()
    for i, model in enumerate(config.models):
        path = f"cluster.models[{i}]"
        if model.model_id in seen_ids:
            problems.append(f"{path}.model_id: duplicate id {model.model_id}")
        seen_ids.add(model.model_id)
        if not model.param_count > 0:
            problems.append(f"{path}.param_count: must be > 0, got {model.param_count}")
        if model.prefill_weight_bits not in (16, 4):
            problems.append(
                f"{path}.prefill_weight_bits: must be 16 or 4, got {model.prefill_weight_bits}"
            )
        if model.decode_weight_bits not in (16, 4):
            problems.append(
                f"{path}.decode_weight_bits: must be 16 or 4, got {model.decode_weight_bits}"
            )
        if not model.kv_bytes_per_token > 0:
            problems.append(
                f"{path}.kv_bytes_per_token: must be > 0, got {model.kv_bytes_per_token}"
            )

    shared_group = [m for m in config.models if m.shared_decoder]
    if shared_group:
        bits = {m.decode_weight_bits for m in shared_group}
        counts = {m.param_count for m in shared_group}
        if len(bits) > 1:
            problems.append(
                "cluster.models: shared_decoder models disagree on decode_weight_bits "
                f"{sorted(bits)}; a shared decoder has one parameter set"
            )
        if len(counts) > 1:
            problems.append(
                "cluster.models: shared_decoder models disagree on param_count "
                f"{sorted(counts)}"
            )

    if config.decode_pool_mode is PoolMode.ISOLATED:
        if config.decode_pool_size != len(config.models):
            problems.append(
                "cluster.decode_pool_size: isolated mode requires one decode worker "
                f"per model (K == {len(config.models)}), got {config.decode_pool_size}"
            )
        if config.routing_policy.decode_rule is not DecodeRule.PINNED:
            problems.append(
                "cluster.routing_policy.decode_rule: isolated mode requires 'pinned', "
                f"got '{config.routing_policy.decode_rule.value}'"
            )
    else:
        not_shared = [m.model_id for m in config.models if not m.shared_decoder]
        if not_shared:
            problems.append(
                "cluster.models: shared pool mode requires shared_decoder=true for all "
                f"models; models {not_shared} are not marked shared"
            )
        if config.routing_policy.decode_rule is DecodeRule.PINNED:
            problems.append(
                "cluster.routing_policy.decode_rule: 'pinned' is only legal in "
                "isolated mode"
            )

    # A worker must at least hold its weights, or it can never admit anything.
    for i, model in enumerate(config.models):
        if model.weight_bytes(WorkerRole.PREFILL) > config.gpu_spec.hbm_capacity:
            problems.append(
                f"cluster.models[{i}]: prefill weights exceed gpu.hbm_capacity"
            )
        if model.weight_bytes(WorkerRole.DECODE) > config.gpu_spec.hbm_capacity:
            problems.append(
                f"cluster.models[{i}]: decode weights exceed gpu.hbm_capacity"
            )

    if problems:
        raise InvalidConfig(problems)
    return config


def prefill_worker_id(model_id: int) -> int:
    """Prefill workers are numbered by the model they serve."""
    return model_id


def decode_worker_ids(config: ClusterConfig) -> list[int]:
    """Decode worker ids follow the prefill block: N .. N+K-1."""
    n = config.n_models
    return list(range(n, n + config.decode_pool_size))


def pinned_decode_worker(config: ClusterConfig, model_id: int) -> int:
    """Isolated mode pins model i to decode worker N+i."""
    return config.n_models + model_id
