"""Event-driven simulation core.

A single-threaded event loop drives per-model prefill workers (FIFO,
single occupancy), KV transfers, and decode workers running continuous
batching: at every step boundary the worker first retires finished
requests, then admits from its queue while reserved memory allows, then
prices one step over the post-admission batch.

Timing rules:
  * the first output token is produced by prefill and delivered when the
    KV transfer lands, so first_token_time == transfer_end;
  * decode then performs target_osl - 1 charged steps per request;
  * each step grows every member's resident KV by one position.

Admission reserves a member's final KV footprint (isl + osl - 1 tokens),
which keeps the memory bound intact at every event without preemption. A
request whose lone footprint cannot fit next to the decoder weights is
rejected with an OverCapacity outcome.

Events at equal timestamps process in a fixed kind order (prefill
completion, transfer, decode boundary, decode step, arrival) with a
sequence-number tiebreak, so runs are fully deterministic.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import IO, Iterable

from . import costmodel
from .costmodel import CostParams
from .domain import (
    IN_TRANSIT,
    ClusterConfig,
    KvHandle,
    ModelProfile,
    PoolMode,
    Request,
    RequestOutcome,
    RoutingPolicy,
    WorkerRole,
    WorkerState,
    decode_worker_ids,
    pinned_decode_worker,
    prefill_worker_id,
    validate_cluster,
)
from .routing import DecodeDispatcher, PoolSnapshot, route_prefill


class SimulationDiverged(Exception):
    """The event queue outgrew its bound; the configuration is unstable."""


class EventKind(IntEnum):
    """Event kinds; the integer value is the same-time processing priority."""

    PREFILL_COMPLETE = 0
    TRANSFER_COMPLETE = 1
    DECODE_BOUNDARY = 2
    DECODE_STEP_COMPLETE = 3
    ARRIVAL = 4
    # Log-only kinds (never queued):
    PREFILL_START = 8
    REQUEST_COMPLETE = 9


# One event-trace entry: (time_s, kind, request_id, worker_id)
TraceEntry = tuple[float, EventKind, int, int]

EVENT_TRACE_HEADER = "time_ns,kind,request_id,worker_id"


def write_event_trace(entries: Iterable[TraceEntry], fh: IO[str]) -> None:
    fh.write(EVENT_TRACE_HEADER + "\n")
    for time_s, kind, request_id, worker_id in entries:
        fh.write(f"{round(time_s * 1e9)},{kind.name},{request_id},{worker_id}\n")


@dataclass
class ResourceLog:
    """Per-run accounting used by metrics sanity checks and tests.

    steps holds one record per decode iteration:
    (worker_id, start_s, duration_s, batch_size, kv_bytes_charged).
    """

    busy_time: dict[int, float] = field(default_factory=dict)
    steps: list[tuple[int, float, float, int, float]] = field(default_factory=list)
    dispatches: list[tuple[int, int]] = field(default_factory=list)
    charged_steps: int = 0
    kv_created: int = 0
    kv_freed: int = 0
    freed_request_ids: set[int] = field(default_factory=set)
    rejected_ids: list[int] = field(default_factory=list)
    peak_bytes: dict[int, float] = field(default_factory=dict)
    horizon_truncated: bool = False


@dataclass
class SimResult:
    requests: list[Request]
    event_trace: list[TraceEntry] | None
    resource_log: ResourceLog

    @property
    def completed(self) -> list[Request]:
        return [r for r in self.requests if r.outcome is RequestOutcome.COMPLETED]


class _PrefillWorker:
    __slots__ = ("worker_id", "model", "busy", "queue", "busy_time")

    def __init__(self, worker_id: int, model: ModelProfile):
        self.worker_id = worker_id
        self.model = model
        self.busy = False
        self.queue: deque[Request] = deque()
        self.busy_time = 0.0

    def snapshot(self, gpu) -> WorkerState:
        return WorkerState(
            worker_id=self.worker_id,
            role=WorkerRole.PREFILL,
            served_models=frozenset({self.model.model_id}),
            gpu=gpu,
            queue=[r.id for r in self.queue],
            busy_until=0.0,
        )


class _Member:
    """A request committed to a decode worker, with its KV handle."""

    __slots__ = ("request", "kv", "reserved_bytes", "retire_at", "steps_done")

    def __init__(self, request: Request, kv: KvHandle):
        self.request = request
        self.kv = kv
        self.reserved_bytes = (request.isl + request.target_osl - 1) * kv.bytes_per_token
        self.retire_at = -1
        self.steps_done = 0


class _DecodeWorker:
    __slots__ = (
        "worker_id",
        "served_models",
        "weight_bytes",
        "capacity",
        "admission_queue",
        "retire_heap",
        "active",
        "batch_size",
        "batch_kvb_sum",
        "resident_tokens",
        "resident_bytes",
        "reserved_bytes",
        "queued_prompt_tokens",
        "remaining_target_tokens",
        "step_index",
        "stepping",
        "step_started",
        "boundary_at",
        "busy_time",
        "peak_bytes",
    )

    def __init__(self, worker_id: int, served_models: frozenset[int], weight_bytes: float, capacity: float):
        self.worker_id = worker_id
        self.served_models = served_models
        self.weight_bytes = weight_bytes
        self.capacity = capacity
        self.admission_queue: deque[_Member] = deque()
        self.retire_heap: list[tuple[int, int, _Member]] = []
        self.active: set[_Member] = set()
        self.batch_size = 0
        self.batch_kvb_sum = 0
        self.resident_tokens = 0
        self.resident_bytes = 0.0
        self.reserved_bytes = 0.0
        self.queued_prompt_tokens = 0
        self.remaining_target_tokens = 0
        self.step_index = 0
        self.stepping = False
        self.step_started = 0.0
        self.boundary_at: float | None = None
        self.busy_time = 0.0
        self.peak_bytes = 0.0

    def pool_snapshot(self) -> PoolSnapshot:
        return PoolSnapshot(
            worker_id=self.worker_id,
            resident_kv_tokens=self.resident_tokens,
            queued_prompt_tokens=self.queued_prompt_tokens,
            remaining_target_tokens=self.remaining_target_tokens,
        )

    def snapshot(self, gpu) -> WorkerState:
        return WorkerState(
            worker_id=self.worker_id,
            role=WorkerRole.DECODE,
            served_models=self.served_models,
            gpu=gpu,
            resident_kv_tokens=self.resident_tokens,
            queue=[m.request.id for m in self.admission_queue],
            active_batch={m.request.id for _, _, m in self.retire_heap},
            busy_until=self.step_started,
        )


class Simulator:
    """One simulation run; owns all mutable state for that run."""

    def __init__(
        self,
        config: ClusterConfig,
        trace: list[Request],
        cost: CostParams,
        policy: RoutingPolicy | None = None,
        horizon: float | None = None,
        record_events: bool = False,
        max_pending_events: int = 5_000_000,
    ):
        validate_cluster(config)
        self.config = config
        self.cost = cost
        self.policy = policy or config.routing_policy
        self.horizon = horizon
        self.record_events = record_events
        self.max_pending_events = max_pending_events
        self.gpu = config.gpu_spec

        # Runs never mutate the caller's trace; each run works on copies.
        self.requests = [
            Request(
                id=r.id,
                model_id=r.model_id,
                arrival_time=r.arrival_time,
                isl=r.isl,
                target_osl=r.target_osl,
            )
            for r in trace
        ]
        self.models = {m.model_id: m for m in config.models}
        self.prefill_map = {
            m.model_id: prefill_worker_id(m.model_id) for m in config.models
        }
        self.prefill_workers = {
            prefill_worker_id(m.model_id): _PrefillWorker(prefill_worker_id(m.model_id), m)
            for m in config.models
        }

        all_model_ids = frozenset(self.models)
        self.decode_workers: dict[int, _DecodeWorker] = {}
        if config.decode_pool_mode is PoolMode.ISOLATED:
            pinned = {}
            for m in config.models:
                wid = pinned_decode_worker(config, m.model_id)
                self.decode_workers[wid] = _DecodeWorker(
                    wid,
                    frozenset({m.model_id}),
                    m.weight_bytes(WorkerRole.DECODE),
                    self.gpu.hbm_capacity,
                )
                pinned[m.model_id] = wid
            self.dispatcher = DecodeDispatcher(self.policy, pinned_map=pinned)
        else:
            shared_weights = config.models[0].weight_bytes(WorkerRole.DECODE)
            for wid in decode_worker_ids(config):
                self.decode_workers[wid] = _DecodeWorker(
                    wid, all_model_ids, shared_weights, self.gpu.hbm_capacity
                )
            self.dispatcher = DecodeDispatcher(self.policy)
        self.decode_order = sorted(self.decode_workers)

        self._heap: list[tuple[float, int, int, int, int]] = []
        self._seq = 0
        self._now = 0.0
        self._dest: dict[int, tuple[int, _Member]] = {}  # request id -> (decode wid, member)
        self.log = ResourceLog()
        self.log.busy_time = {wid: 0.0 for wid in self.prefill_workers}
        self.log.busy_time.update({wid: 0.0 for wid in self.decode_workers})
        self.log.peak_bytes = {wid: w.weight_bytes for wid, w in self.decode_workers.items()}
        self.events: list[TraceEntry] | None = [] if record_events else None

    # -- event plumbing ----------------------------------------------------

    def _push(self, time: float, kind: EventKind, request_id: int, worker_id: int) -> None:
        if len(self._heap) >= self.max_pending_events:
            raise SimulationDiverged(
                f"event queue exceeded {self.max_pending_events} entries at "
                f"t={self._now:.3f}s; configuration looks unstable"
            )
        heapq.heappush(self._heap, (time, int(kind), self._seq, request_id, worker_id))
        self._seq += 1

    def _log_event(self, time: float, kind: EventKind, request_id: int, worker_id: int) -> None:
        if self.events is not None:
            self.events.append((time, kind, request_id, worker_id))

    # -- prefill -----------------------------------------------------------

    def _start_prefill(self, worker: _PrefillWorker, request: Request, now: float) -> None:
        request.prefill_start = now
        worker.busy = True
        self._log_event(now, EventKind.PREFILL_START, request.id, worker.worker_id)
        duration = costmodel.prefill_time(worker.model, request.isl, self.cost, self.gpu)
        self._push(now + duration, EventKind.PREFILL_COMPLETE, request.id, worker.worker_id)

    def _on_arrival(self, request: Request, now: float) -> None:
        wid = route_prefill(request, self.prefill_map)
        worker = self.prefill_workers[wid]
        self._log_event(now, EventKind.ARRIVAL, request.id, wid)
        if worker.busy:
            worker.queue.append(request)
        else:
            self._start_prefill(worker, request, now)

    def _on_prefill_complete(self, request: Request, worker: _PrefillWorker, now: float) -> None:
        request.prefill_end = now
        worker.busy_time += now - request.prefill_start  # type: ignore[operator]
        self.log.busy_time[worker.worker_id] = worker.busy_time
        self._log_event(now, EventKind.PREFILL_COMPLETE, request.id, worker.worker_id)

        model = worker.model
        kv = KvHandle(
            request_id=request.id,
            resident_tokens=request.isl,
            bytes_per_token=model.kv_bytes_per_token,
            location=IN_TRANSIT,
        )
        self.log.kv_created += 1
        pool = [self.decode_workers[w].pool_snapshot() for w in self.decode_order]
        dest = self.dispatcher.route(request, pool)
        self.log.dispatches.append((request.id, dest))
        member = _Member(request, kv)
        dw = self.decode_workers[dest]
        dw.queued_prompt_tokens += request.isl
        dw.remaining_target_tokens += request.target_osl - 1
        self._dest[request.id] = (dest, member)
        self._push(
            now + costmodel.transfer_time(kv, self.gpu),
            EventKind.TRANSFER_COMPLETE,
            request.id,
            dest,
        )

        # The prefill GPU is freed at prefill_end; transfer is offloaded.
        if worker.queue:
            self._start_prefill(worker, worker.queue.popleft(), now)
        else:
            worker.busy = False

    # -- decode ------------------------------------------------------------

    def _free_kv(self, member: _Member) -> None:
        rid = member.request.id
        if rid in self.log.freed_request_ids:
            raise AssertionError(f"KV handle for request {rid} freed twice")
        self.log.freed_request_ids.add(rid)
        self.log.kv_freed += 1

    def _complete(self, member: _Member, worker_id: int, now: float) -> None:
        request = member.request
        request.completion_time = now
        request.realized_osl = request.target_osl
        request.outcome = RequestOutcome.COMPLETED
        self._free_kv(member)
        self._log_event(now, EventKind.REQUEST_COMPLETE, request.id, worker_id)

    def _on_transfer_complete(self, request: Request, now: float) -> None:
        dest, member = self._dest.pop(request.id)
        worker = self.decode_workers[dest]
        request.transfer_end = now
        request.first_token_time = now
        self._log_event(now, EventKind.TRANSFER_COMPLETE, request.id, dest)

        if request.target_osl == 1:
            # Prefill produced the only token; nothing left to decode.
            worker.queued_prompt_tokens -= request.isl
            member.kv.location = dest
            self._complete(member, dest, now)
            return

        worker.admission_queue.append(member)
        if not worker.stepping and worker.boundary_at != now:
            worker.boundary_at = now
            self._push(now, EventKind.DECODE_BOUNDARY, -1, dest)

    def _reject(self, member: _Member, worker: _DecodeWorker, now: float) -> None:
        request = member.request
        request.outcome = RequestOutcome.OVER_CAPACITY
        request.completion_time = None
        worker.queued_prompt_tokens -= request.isl
        worker.remaining_target_tokens -= request.target_osl - 1
        self._free_kv(member)
        self.log.rejected_ids.append(request.id)

    def _admit_and_step(self, worker: _DecodeWorker, now: float) -> None:
        queue = worker.admission_queue
        while queue:
            member = queue[0]
            request = member.request
            if worker.weight_bytes + worker.reserved_bytes + member.reserved_bytes <= worker.capacity:
                queue.popleft()
                member.kv.location = worker.worker_id
                member.retire_at = worker.step_index + request.target_osl - 1
                heapq.heappush(worker.retire_heap, (member.retire_at, request.id, member))
                worker.active.add(member)
                worker.reserved_bytes += member.reserved_bytes
                worker.batch_size += 1
                worker.batch_kvb_sum += member.kv.bytes_per_token
                worker.resident_tokens += request.isl
                worker.resident_bytes += request.isl * member.kv.bytes_per_token
                worker.queued_prompt_tokens -= request.isl
            elif worker.weight_bytes + member.reserved_bytes > worker.capacity:
                queue.popleft()
                self._reject(member, worker, now)
            else:
                break  # head fits once something retires; FIFO blocks behind it

        if worker.batch_size > 0:
            duration = costmodel.decode_step_time_from_totals(
                worker.resident_bytes, worker.weight_bytes, self.cost, self.gpu
            )
            worker.stepping = True
            worker.step_started = now
            used = worker.weight_bytes + worker.resident_bytes
            if used > worker.capacity:
                raise AssertionError(
                    f"decode worker {worker.worker_id} exceeded HBM capacity at t={now}"
                )
            if used > worker.peak_bytes:
                worker.peak_bytes = used
                self.log.peak_bytes[worker.worker_id] = used
            self.log.steps.append(
                (worker.worker_id, now, duration, worker.batch_size, worker.resident_bytes)
            )
            self._push(now + duration, EventKind.DECODE_STEP_COMPLETE, -1, worker.worker_id)
        else:
            worker.stepping = False

    def _on_step_complete(self, worker: _DecodeWorker, now: float) -> None:
        # The finished step generated one token per member.
        worker.busy_time += now - worker.step_started
        self.log.busy_time[worker.worker_id] = worker.busy_time
        worker.step_index += 1
        worker.resident_tokens += worker.batch_size
        worker.resident_bytes += worker.batch_kvb_sum
        worker.remaining_target_tokens -= worker.batch_size
        self.log.charged_steps += worker.batch_size
        if self.record_events:
            for member in worker.active:
                member.steps_done += 1
                member.kv.resident_tokens += 1
                expected = member.request.isl + member.steps_done
                if member.kv.resident_tokens != expected:
                    raise AssertionError(
                        f"KV counter drift on request {member.request.id}: "
                        f"{member.kv.resident_tokens} != {expected}"
                    )
        self._log_event(now, EventKind.DECODE_STEP_COMPLETE, -1, worker.worker_id)

        heap = worker.retire_heap
        while heap and heap[0][0] <= worker.step_index:
            _, _, member = heapq.heappop(heap)
            request = member.request
            final_tokens = request.isl + request.target_osl - 1
            member.kv.resident_tokens = final_tokens
            worker.resident_tokens -= final_tokens
            worker.resident_bytes -= final_tokens * member.kv.bytes_per_token
            worker.reserved_bytes -= member.reserved_bytes
            worker.batch_size -= 1
            worker.batch_kvb_sum -= member.kv.bytes_per_token
            worker.active.discard(member)
            self._complete(member, worker.worker_id, now)

        self._admit_and_step(worker, now)

    # -- main loop ----------------------------------------------------------

    def run(self) -> SimResult:
        for request in self.requests:
            self._push(request.arrival_time, EventKind.ARRIVAL, request.id, -1)
        by_id = {r.id: r for r in self.requests}

        heap = self._heap
        while heap:
            time, kind, _seq, request_id, worker_id = heapq.heappop(heap)
            if self.horizon is not None and time > self.horizon:
                self.log.horizon_truncated = True
                break
            if time < self._now:
                raise AssertionError(f"time went backwards: {time} < {self._now}")
            self._now = time
            if kind == EventKind.ARRIVAL:
                self._on_arrival(by_id[request_id], time)
            elif kind == EventKind.PREFILL_COMPLETE:
                self._on_prefill_complete(
                    by_id[request_id], self.prefill_workers[worker_id], time
                )
            elif kind == EventKind.TRANSFER_COMPLETE:
                self._on_transfer_complete(by_id[request_id], time)
            elif kind == EventKind.DECODE_BOUNDARY:
                worker = self.decode_workers[worker_id]
                worker.boundary_at = None
                if not worker.stepping:
                    self._admit_and_step(worker, time)
            elif kind == EventKind.DECODE_STEP_COMPLETE:
                self._on_step_complete(self.decode_workers[worker_id], time)
            else:
                raise AssertionError(f"unexpected queued event kind {kind}")

        return SimResult(
            requests=self.requests,
            event_trace=self.events,
            resource_log=self.log,
        )

    def worker_states(self) -> list[WorkerState]:
        """Spec-shaped snapshots of every worker (for inspection/tests)."""
        states = [w.snapshot(self.gpu) for w in self.prefill_workers.values()]
        states.extend(w.snapshot(self.gpu) for w in self.decode_workers.values())
        return sorted(states, key=lambda s: s.worker_id)


def run(
    config: ClusterConfig,
    trace: list[Request],
    cost: CostParams,
    policy: RoutingPolicy | None = None,
    horizon: float | None = None,
    record_events: bool = False,
    max_pending_events: int = 5_000_000,
) -> SimResult:
    """Simulate one run; deterministic in all arguments.

    horizon=None runs to full drain. The caller's trace is never mutated.
    """
    sim = Simulator(
        config,
        trace,
        cost,
        policy=policy,
        horizon=horizon,
        record_events=record_events,
        max_pending_events=max_pending_events,
    )
    return sim.run()
