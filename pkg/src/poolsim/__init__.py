"""poolsim: discrete-event simulation of disaggregated multi-LLM serving.

Models a cluster with one prefill worker per task-specialized model and a
decode tier that is either partitioned per model or pooled behind a
model-agnostic router, with an analytic roofline cost model calibrated to
measured TTFT/TPOT numbers (including decode-only weight quantization).
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .costmodel import (
    CalibrationInfeasible,
    CalibrationTarget,
    CostParams,
    MixedDecoderError,
    calibrate,
    decode_step_time,
    prefill_time,
    transfer_time,
)
from .domain import (
    ClusterConfig,
    DecodeRule,
    GpuSpec,
    InvalidConfig,
    KvHandle,
    ModelProfile,
    PoolMode,
    Request,
    RequestOutcome,
    RoutingPolicy,
    WorkerRole,
    WorkerState,
    validate_cluster,
)
from .engine import SimResult, SimulationDiverged, run
from .harness import SweepSpec, run_single, run_sweep
from .metrics import EmptyWindow, IncompleteRequest, RunSummary, per_request_metrics, summarize
from .routing import DecodeDispatcher, EmptyPool, PoolSnapshot, UnknownModel, route_prefill
from .workload import (
    ArrivalProcess,
    WorkloadSpec,
    generate_trace,
    measurement_filter,
    zipf_split,
)

__all__ = [
    "ArrivalProcess",
    "CalibrationInfeasible",
    "CalibrationTarget",
    "ClusterConfig",
    "CostParams",
    "DecodeDispatcher",
    "DecodeRule",
    "EmptyPool",
    "EmptyWindow",
    "GpuSpec",
    "IncompleteRequest",
    "InvalidConfig",
    "KvHandle",
    "MixedDecoderError",
    "ModelProfile",
    "PoolMode",
    "PoolSnapshot",
    "Request",
    "RequestOutcome",
    "RoutingPolicy",
    "RunConfig",
    "RunSummary",
    "SimResult",
    "SimulationDiverged",
    "SweepSpec",
    "UnknownModel",
    "WorkerRole",
    "WorkerState",
    "WorkloadSpec",
    "calibrate",
    "decode_step_time",
    "generate_trace",
    "load_config",
    "measurement_filter",
    "per_request_metrics",
    "prefill_time",
    "route_prefill",
    "run",
    "run_single",
    "run_sweep",
    "summarize",
    "transfer_time",
    "validate_cluster",
    "zipf_split",
]
