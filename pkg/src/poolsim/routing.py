"""Request-to-worker dispatch.

Prefill routing is a fixed model -> worker map. Decode routing is
pluggable; every shared-pool rule is model-agnostic by construction: the
decision reads only worker load snapshots, never the request's model.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .domain import DecodeRule, Request, RoutingPolicy


class UnknownModel(Exception):
    """A request named a model with no mapped prefill worker."""


class EmptyPool(Exception):
    """Decode routing was asked to pick from an empty pool."""


@dataclass(frozen=True)
class PoolSnapshot:
    """What a decode rule may look at for one worker, at decision time.

    queued_prompt_tokens and remaining_target_tokens cover both requests
    already committed to the worker (in transit or awaiting admission) and
    the active batch's unfinished output.
    """

    worker_id: int
    resident_kv_tokens: int
    queued_prompt_tokens: int
    remaining_target_tokens: int


def outstanding_tokens(snap: PoolSnapshot, load_metric: str = "anticipatory") -> int:
    if load_metric == "kv_only":
        return snap.resident_kv_tokens
    return (
        snap.resident_kv_tokens
        + snap.queued_prompt_tokens
        + snap.remaining_target_tokens
    )


def route_prefill(request: Request, prefill_map: dict[int, int]) -> int:
    """Fixed, deterministic model-specific prefill dispatch."""
    try:
        return prefill_map[request.model_id]
    except KeyError:
        raise UnknownModel(
            f"request {request.id}: model {request.model_id} has no prefill worker"
        ) from None


class DecodeDispatcher:
    """Centralized decode dispatcher; owns the stateful rule internals.

    The round-robin counter and the weighted-random generator are part of
    the run's state, so a run is reproducible from (policy, trace) alone.
    """

    def __init__(self, policy: RoutingPolicy, pinned_map: dict[int, int] | None = None):
        self.policy = policy
        self.pinned_map = pinned_map or {}
        self._rr_next = 0
        self._rng = random.Random(policy.seed)

    def route(self, request: Request, pool: list[PoolSnapshot]) -> int:
        if not pool:
            raise EmptyPool("decode pool is empty")
        rule = self.policy.decode_rule
        if rule is DecodeRule.PINNED:
            try:
                return self.pinned_map[request.model_id]
            except KeyError:
                raise UnknownModel(
                    f"request {request.id}: model {request.model_id} has no pinned "
                    "decode worker"
                ) from None
        if rule is DecodeRule.LEAST_OUTSTANDING_TOKENS:
            best = min(
                pool,
                key=lambda s: (outstanding_tokens(s, self.policy.load_metric), s.worker_id),
            )
            return best.worker_id
        if rule is DecodeRule.ROUND_ROBIN:
            ordered = sorted(pool, key=lambda s: s.worker_id)
            choice = ordered[self._rr_next % len(ordered)]
            self._rr_next += 1
            return choice.worker_id
        if rule is DecodeRule.WEIGHTED_RANDOM:
            ordered = sorted(pool, key=lambda s: s.worker_id)
            weights = [
                1.0 / (1.0 + outstanding_tokens(s, self.policy.load_metric))
                for s in ordered
            ]
            return self._rng.choices(ordered, weights=weights, k=1)[0].worker_id
        raise ValueError(f"unknown decode rule: {rule}")
