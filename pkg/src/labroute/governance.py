"""Policy enforcement: budgets, L3 caps, approvals, stickiness, integrity.

Budget debits are two-phase (reserve at plan time, commit with actual cost
after the backend call) so failed calls never consume budget. The approval
queue is FIFO with c servers; in simulation the service model is M/M/c.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import threading
from dataclasses import dataclass, field, replace

import yaml

from .core import ConfigError, HintLevel, PolicyMode, Tier

DEFAULT_BUDGET_MICRO = 5_000_000  # $5 per (session, lab)
DEFAULT_L3_MAX = 2
DEFAULT_INTEGRITY_THRESHOLD = 3


@dataclass
class PolicyConfig:
    """All governance knobs for one policy mode."""

    mode: PolicyMode
    total_budget_micro: int = DEFAULT_BUDGET_MICRO
    l3_max: int = DEFAULT_L3_MAX
    approvals_enabled: bool = False
    justification_required: bool = False
    approval_servers: int = 2
    approval_mean_service_s: float = 15.0
    approval_approve_prob: float = 0.8
    overlay_mode: str = "enforced"  # enforced | evaluate | off
    default_overlay_id: str | None = "socratic_troubleshoot"
    freeze_ttl_turns: int = 3
    freeze_ttl_seconds: float | None = 300.0
    stickiness_ttl_seconds: float | None = 300.0
    integrity_gating: bool = False
    integrity_threshold: int = DEFAULT_INTEGRITY_THRESHOLD
    hint_cap: HintLevel = HintLevel.L3
    l2_min_attempts: int = 0  # unanswered attempts required before an L2 grant

    def __post_init__(self) -> None:
        if self.total_budget_micro < 0:
            raise ConfigError("total_budget_micro must be >= 0")
        if self.l3_max < 0:
            raise ConfigError("l3_max must be >= 0")
        if self.approval_servers < 1:
            raise ConfigError("approval_servers must be >= 1")
        if self.overlay_mode not in ("enforced", "evaluate", "off"):
            raise ConfigError(f"unknown overlay_mode: {self.overlay_mode}")

    @property
    def governed(self) -> bool:
        return self.mode in (PolicyMode.P1, PolicyMode.P2)

    def policy_hash(self) -> str:
        payload = {
            k: (str(v) if isinstance(v, (PolicyMode, HintLevel)) else v)
            for k, v in sorted(self.__dict__.items())
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def default_policy(mode: PolicyMode) -> PolicyConfig:
    if mode is PolicyMode.P0:
        return PolicyConfig(
            mode=mode,
            approvals_enabled=False,
            overlay_mode="evaluate",
            default_overlay_id="socratic_troubleshoot",
            freeze_ttl_seconds=None,
            stickiness_ttl_seconds=None,
            l2_min_attempts=0,
        )
    if mode is PolicyMode.P1:
        return PolicyConfig(
            mode=mode,
            approvals_enabled=False,
            overlay_mode="enforced",
            freeze_ttl_seconds=300.0,
            stickiness_ttl_seconds=300.0,
            l2_min_attempts=2,
        )
    return PolicyConfig(
        mode=PolicyMode.P2,
        approvals_enabled=True,
        justification_required=True,
        overlay_mode="enforced",
        freeze_ttl_seconds=1800.0,
        stickiness_ttl_seconds=1800.0,
        integrity_gating=True,
        l2_min_attempts=3,
    )


def load_policy(path) -> PolicyConfig:
    with open(path) as f:
        raw = yaml.safe_load(f)
    mode = PolicyMode.parse(raw.pop("mode"))
    base = default_policy(mode)
    fields = {}
    for key, value in raw.items():
        if not hasattr(base, key):
            raise ConfigError(f"unknown policy knob: {key}")
        if key == "hint_cap":
            value = HintLevel.parse(value)
        fields[key] = value
    return replace(base, **fields)


# --- Budgets -----------------------------------------------------------------


class GovernanceError(Exception):
    pass


@dataclass
class CheckResult:
    allowed: bool
    capped_level: HintLevel
    reason: str
    reservation_id: int | None = None


@dataclass
class BudgetState:
    session_id: str
    lab_id: str
    total_budget_micro: int = DEFAULT_BUDGET_MICRO
    spent_micro: int = 0
    l3_granted_count: int = 0
    _reservations: dict[int, int] = field(default_factory=dict)
    _next_reservation: "itertools.count" = field(default_factory=itertools.count)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def reserved_micro(self) -> int:
        return sum(self._reservations.values())

    def check_and_debit(
        self,
        est_cost_micro: int,
        requested: HintLevel,
        policy: PolicyConfig,
        per_turn_cap_micro: int | None = None,
    ) -> CheckResult:
        """Check limits and provisionally reserve the estimated cost.

        Under P0 the spend is still reserved (and logged on commit) but no
        limit is enforced. Denial is a result, never an exception.
        """
        if est_cost_micro < 0:
            raise ValueError("est_cost_micro must be >= 0")
        with self._lock:
            if policy.mode is PolicyMode.P0:
                rid = next(self._next_reservation)
                self._reservations[rid] = est_cost_micro
                return CheckResult(True, requested, "ok", rid)
            level = min(requested, policy.hint_cap)
            reason = "ok" if level == requested else "policy_cap"
            if level is HintLevel.L3 and self.l3_granted_count >= policy.l3_max:
                level = HintLevel.L2
                reason = "l3_cap"
            if self.spent_micro >= policy.total_budget_micro:
                return CheckResult(False, HintLevel.L0, "budget_exhausted", None)
            if per_turn_cap_micro is not None and est_cost_micro > per_turn_cap_micro:
                return CheckResult(False, level, "per_turn_cap", None)
            if self.spent_micro + self.reserved_micro + est_cost_micro > policy.total_budget_micro:
                return CheckResult(False, level, "budget", None)
            rid = next(self._next_reservation)
            self._reservations[rid] = est_cost_micro
            return CheckResult(True, level, reason, rid)

    def commit_debit(self, reservation_id: int, actual_cost_micro: int, granted: HintLevel) -> None:
        with self._lock:
            if reservation_id not in self._reservations:
                raise GovernanceError(f"no such reservation: {reservation_id}")
            del self._reservations[reservation_id]
            self.spent_micro += actual_cost_micro
            if granted is HintLevel.L3:
                self.l3_granted_count += 1

    def rollback(self, reservation_id: int) -> None:
        with self._lock:
            if reservation_id not in self._reservations:
                raise GovernanceError(f"no such reservation: {reservation_id}")
            del self._reservations[reservation_id]


# --- Approvals ---------------------------------------------------------------


@dataclass
class ApprovalRequest:
    approval_id: str
    session_id: str
    requested_level: HintLevel
    justification: str
    enqueued_at: float
    decided_at: float | None = None
    decision: str = "pending"  # pending | approved | denied

    @property
    def wait_ms(self) -> int | None:
        if self.decided_at is None:
            return None
        return round((self.decided_at - self.enqueued_at) * 1000)


class ApprovalQueue:
    """FIFO approval queue with c servers and justification gating for L3."""

    def __init__(self, servers: int = 2):
        self.servers = servers
        self._lock = threading.Lock()
        self._requests: dict[str, ApprovalRequest] = {}
        self._order: list[str] = []
        self._counter = itertools.count(1)
        self._server_free_at = [0.0] * servers

    def enqueue(
        self,
        session_id: str,
        requested_level: HintLevel,
        justification: str,
        enqueued_at: float,
        policy: PolicyConfig,
    ) -> ApprovalRequest:
        if requested_level is not HintLevel.L3:
            raise GovernanceError("approval_not_required")
        if policy.justification_required and not justification.strip():
            raise GovernanceError("justification_required")
        with self._lock:
            approval_id = f"apr-{next(self._counter):06d}"
            req = ApprovalRequest(
                approval_id=approval_id,
                session_id=session_id,
                requested_level=requested_level,
                justification=justification,
                enqueued_at=enqueued_at,
            )
            self._requests[approval_id] = req
            self._order.append(approval_id)
            return req

    def pending(self) -> list[ApprovalRequest]:
        with self._lock:
            return [self._requests[i] for i in self._order if self._requests[i].decision == "pending"]

    def all_requests(self) -> list[ApprovalRequest]:
        with self._lock:
            return [self._requests[i] for i in self._order]

    def get(self, approval_id: str) -> ApprovalRequest:
        with self._lock:
            try:
                return self._requests[approval_id]
            except KeyError:
                raise GovernanceError(f"unknown approval_id: {approval_id}") from None

    def decide(self, approval_id: str, decision: str, decided_at: float) -> ApprovalRequest:
        if decision not in ("approved", "denied"):
            raise GovernanceError(f"invalid decision: {decision}")
        with self._lock:
            req = self._requests.get(approval_id)
            if req is None:
                raise GovernanceError(f"unknown approval_id: {approval_id}")
            if req.decision != "pending":
                raise GovernanceError(f"already decided: {approval_id}")
            req.decision = decision
            req.decided_at = decided_at
            return req

    def schedule_service(self, approval_id: str, service_time_s: float) -> float:
        """M/M/c service: returns the decision time for a pending request,
        honoring FIFO order and server availability. Used by the simulator."""
        with self._lock:
            req = self._requests.get(approval_id)
            if req is None:
                raise GovernanceError(f"unknown approval_id: {approval_id}")
            server = min(range(self.servers), key=lambda i: self._server_free_at[i])
            start = max(req.enqueued_at, self._server_free_at[server])
            decided_at = start + service_time_s
            self._server_free_at[server] = decided_at
            return decided_at


# --- Stickiness and integrity ------------------------------------------------


@dataclass
class StickinessState:
    session_id: str
    frozen_model: str | None = None
    freeze_remaining_turns: int = 0
    freeze_deadline: float | None = None
    boost_pending: bool = False
    last_canonical_id: str | None = None
    last_model: str | None = None
    last_tier: Tier | None = None
    last_turn_at: float | None = None

    def apply(
        self, planned_model: str, boost_model: str, now: float | None = None
    ) -> tuple[str, str | None]:
        """Resolve the effective model: boost wins for one turn, then an
        active freeze, else the planned model. Returns (model, override)."""
        if self.boost_pending:
            self.boost_pending = False
            return boost_model, "boost"
        if self.frozen_model is not None:
            active = self.freeze_remaining_turns > 0
            if self.freeze_deadline is not None and now is not None:
                active = now < self.freeze_deadline
            if active:
                if self.freeze_deadline is None:
                    self.freeze_remaining_turns -= 1
                return self.frozen_model, "freeze"
            self.frozen_model = None
            self.freeze_remaining_turns = 0
            self.freeze_deadline = None
        return planned_model, None

    def set_freeze(
        self, model: str, ttl_turns: int | None = None, ttl_seconds: float | None = None,
        now: float | None = None,
    ) -> None:
        self.frozen_model = model
        self.freeze_remaining_turns = ttl_turns or 0
        self.freeze_deadline = (now + ttl_seconds) if (ttl_seconds and now is not None) else None

    def clear_freeze(self) -> None:
        self.frozen_model = None
        self.freeze_remaining_turns = 0
        self.freeze_deadline = None


@dataclass
class IntegrityState:
    session_id: str
    consecutive_flags: int = 0
    throttled: bool = False

    def record(self, flagged: bool, policy: PolicyConfig) -> bool:
        """Update the flag run; returns True when assistance is blocked."""
        if flagged:
            self.consecutive_flags += 1
        else:
            self.consecutive_flags = 0
        self.throttled = self.consecutive_flags >= policy.integrity_threshold
        return self.throttled and policy.integrity_gating
